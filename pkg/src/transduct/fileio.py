"""Bit-exact file formats: embeddings, labels, predictions, configs.

Embedding container ("EMB1"): 4 magic bytes ``EMB1``, then two little-
endian uint32 fields (row count, dimension), then row-major float32
little-endian payload. The raw reader/writer pair below round-trips any
finite float32 matrix bit-exactly; unit-norm validation happens only when
the matrix is promoted to an EmbeddingMatrix.

CSV embeddings (files ending in ``.csv``): one row per line, comma
separated decimal numbers, uniform column count.

Labels: one non-negative integer per line; a trailing final newline is
optional, interior blank lines are errors.
"""

from __future__ import annotations

import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    NegativeLabel,
    NonFiniteValue,
    ParseError,
    RaggedCsv,
    TruncatedFile,
)
from .types import EmbeddingMatrix, SimplexAssignments

_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")
# Declared payloads above this are treated as corrupt headers.
_MAX_BYTES = 1 << 30


def write_embeddings(matrix, path) -> None:
    """Write a matrix (EmbeddingMatrix or array) in the EMB1 binary format."""
    data = matrix.data if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    if data.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {data.shape}")
    payload = np.ascontiguousarray(data, dtype="<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, data.shape[0], data.shape[1]))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_matrix(path) -> np.ndarray:
    """Read raw float32 rows from an EMB1 or ``.csv`` file, bit-exactly.

    No normalization is applied; promote with ``read_embeddings`` to get a
    validated unit-norm EmbeddingMatrix.
    """
    if str(path).endswith(".csv"):
        return _read_csv(path)
    try:
        with open(path, "rb") as fh:
            header = fh.read(_HEADER.size)
            if len(header) < _HEADER.size:
                raise TruncatedFile(f"{path}: missing header")
            magic, n_rows, dim = _HEADER.unpack(header)
            if magic != _MAGIC:
                raise BadMagic(f"{path}: expected {_MAGIC!r} magic, got {magic!r}")
            n_bytes = n_rows * dim * 4
            if n_bytes > _MAX_BYTES:
                raise TruncatedFile(
                    f"{path}: header declares {n_bytes} payload bytes, above the "
                    f"{_MAX_BYTES} sanity cap"
                )
            payload = fh.read(n_bytes)
            if len(payload) < n_bytes:
                raise TruncatedFile(
                    f"{path}: payload has {len(payload)} bytes, header declares {n_bytes}"
                )
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    flat = np.frombuffer(payload, dtype="<f4")
    return flat.reshape(n_rows, dim)


def read_embeddings(path) -> EmbeddingMatrix:
    """Read and validate an embedding file; rows are unit-normalized."""
    return EmbeddingMatrix(read_matrix(path))


def _read_csv(path) -> np.ndarray:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: empty CSV")
    rows = []
    width = None
    for lineno, line in enumerate(lines, start=1):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise RaggedCsv(
                f"{path}:{lineno}: expected {width} columns, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    data = np.asarray(rows, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{path}: CSV contains non-finite values")
    return data


def read_labels(path) -> np.ndarray:
    """Read newline-separated non-negative integer class labels."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()
    labels = []
    for lineno, line in enumerate(lines, start=1):
        try:
            value = int(line, 10)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: not an integer: {line!r}") from exc
        if value < 0:
            raise NegativeLabel(f"{path}:{lineno}: negative label {value}")
        labels.append(value)
    return np.asarray(labels, dtype=np.int64)


def write_labels(labels: Iterable[int], path) -> None:
    try:
        with open(path, "w", encoding="ascii") as fh:
            for value in labels:
                fh.write(f"{int(value)}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_predictions(assignments: SimplexAssignments, path) -> None:
    """Write per-sample predictions as CSV.

    Columns: row index, argmax class, its probability, then the full
    probability row, all probabilities at 9 significant digits.
    """
    z = assignments.z
    preds = np.argmax(z, axis=1)
    header = "index,pred,conf," + ",".join(f"p_{k}" for k in range(z.shape[1]))
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(header + "\n")
            for i, row in enumerate(z):
                probs = ",".join(f"{p:.9g}" for p in row)
                fh.write(f"{i},{preds[i]},{row[preds[i]]:.9g},{probs}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a predictions CSV back into (argmax classes, probability rows)."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("index,pred,conf"):
        raise ParseError(f"{path}: missing predictions header")
    preds = []
    probs = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) < 4:
            raise ParseError(f"{path}:{lineno}: too few columns")
        try:
            preds.append(int(cells[1]))
            probs.append([float(c) for c in cells[3:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return np.asarray(preds, dtype=np.int64), np.asarray(probs)


def write_config(values: dict, path) -> None:
    """Write a flat key=value config file, one entry per line."""
    try:
        with open(path, "w", encoding="ascii") as fh:
            for key, value in values.items():
                fh.write(f"{key}={value}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_config(path) -> dict:
    """Read a flat key=value config file; '#' lines and blanks are skipped."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"{path}:{lineno}: expected key=value")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def write_trace(rows: Sequence, path) -> None:
    """Write the solver objective trace as CSV."""
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("iteration,block,normalized,update_consistent\n")
            for row in rows:
                fh.write(
                    f"{row.iteration},{row.block},"
                    f"{row.normalized:.17g},{row.update_consistent:.17g}\n"
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_score_table(table: Sequence[tuple[float, float]], path) -> None:
    """Write the support-weight search results as CSV."""
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("gamma,validation_accuracy\n")
            for gamma, acc in table:
                fh.write(f"{gamma:.9g},{acc:.9g}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_score_table(path) -> list[tuple[float, float]]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln for ln in fh.read().split("\n") if ln]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0] != "gamma,validation_accuracy":
        raise ParseError(f"{path}: missing score-table header")
    out = []
    for line in lines[1:]:
        gamma, _, acc = line.partition(",")
        out.append((float(gamma), float(acc)))
    return out
