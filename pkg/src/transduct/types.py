"""Validated data types for transductive embedding classification.

All types are immutable after construction (arrays are marked read-only)
and safe to share across threads. No algorithms live here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    LabelOutOfRange,
    NonFiniteValue,
    NormTooFarFromUnit,
)

# Row norms may deviate this much from 1.0 before the row is rejected as
# corrupt instead of silently renormalized.
NORM_GATE = 1e-2
# Guaranteed row-norm accuracy after normalization.
NORM_TOL = 1e-4
# Rows already this close to unit norm are left untouched, which makes
# normalization bitwise idempotent.
_NORM_SKIP = 1e-12

# Assignment rows must sum to 1 within this tolerance.
ROW_SUM_TOL = 1e-9

# Lower bound applied to every per-dimension variance.
VAR_FLOOR = 1e-12


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


def normalize_rows(data: np.ndarray) -> np.ndarray:
    """Return `data` with unit-norm rows, rejecting rows too far from unit.

    Rows whose norm deviates from 1 by more than NORM_GATE raise
    NormTooFarFromUnit; rows within _NORM_SKIP are returned unchanged so
    repeated normalization is a bitwise no-op.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("embedding matrix contains non-finite entries")
    norms = np.linalg.norm(data, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > NORM_GATE):
        worst = int(np.argmax(off))
        raise NormTooFarFromUnit(
            f"row {worst} has norm {norms[worst]:.6f}, "
            f"further than {NORM_GATE} from 1.0"
        )
    fix = off > _NORM_SKIP
    if np.any(fix):
        data = data.copy()
        data[fix] /= norms[fix, None]
    return data


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """N x d matrix of unit-norm feature vectors (rows)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(normalize_rows(self.data)))
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DimensionMismatch(f"degenerate shape {self.data.shape}")

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class SimplexAssignments:
    """N x K matrix of per-row probability vectors over classes."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
            raise DimensionMismatch(f"expected a 2-d matrix, got shape {z.shape}")
        if not np.all(np.isfinite(z)):
            raise NonFiniteValue("assignment matrix contains non-finite entries")
        if np.any(z < 0.0) or np.any(z > 1.0):
            raise ValueError("assignment entries must lie in [0, 1]")
        if np.any(np.abs(z.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("assignment rows must sum to 1")
        object.__setattr__(self, "z", _freeze(z))

    @classmethod
    def one_hot(cls, labels: np.ndarray, n_classes: int) -> "SimplexAssignments":
        labels = np.asarray(labels, dtype=np.int64)
        z = np.zeros((labels.shape[0], n_classes))
        z[np.arange(labels.shape[0]), labels] = 1.0
        return cls(z)

    @property
    def n_rows(self) -> int:
        return self.z.shape[0]

    @property
    def n_classes(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True, eq=False)
class GmmParams:
    """K class means plus one shared vector of per-dimension variances."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        if means.ndim != 2 or variances.ndim != 1:
            raise DimensionMismatch("means must be K x d, variances a d-vector")
        if means.shape[1] != variances.shape[0]:
            raise DimensionMismatch(
                f"means dim {means.shape[1]} != variances dim {variances.shape[0]}"
            )
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise NonFiniteValue("GMM parameters contain non-finite entries")
        if np.any(variances < VAR_FLOOR):
            raise ValueError(f"variances must be >= {VAR_FLOOR}")
        object.__setattr__(self, "means", _freeze(means))
        object.__setattr__(self, "variances", _freeze(variances))

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """Sparse directed nearest-neighbor graph with non-negative weights.

    Stored in compressed row form: node i's neighbors are
    indices[indptr[i]:indptr[i+1]] with matching weights, sorted by
    descending weight. Self-edges are forbidden.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    n_nodes: int
    max_degree: int

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if indptr.shape != (self.n_nodes + 1,):
            raise DimensionMismatch("indptr must have n_nodes + 1 entries")
        if indices.shape != weights.shape or indices.ndim != 1:
            raise DimensionMismatch("indices and weights must be equal-length vectors")
        if indptr[0] != 0 or indptr[-1] != indices.shape[0]:
            raise ValueError("indptr does not span the edge arrays")
        if np.any(np.diff(indptr) < 0) or np.any(np.diff(indptr) > self.max_degree):
            raise ValueError(f"per-node neighbor lists must have <= {self.max_degree} entries")
        if indices.size:
            if indices.min() < 0 or indices.max() >= self.n_nodes:
                raise ValueError("neighbor index out of range")
            if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
                raise NonFiniteValue("edge weights must be finite and non-negative")
            spans = np.repeat(np.arange(self.n_nodes), np.diff(indptr))
            if np.any(indices == spans):
                raise ValueError("self-edges are not allowed")
            # sorted by descending weight within each node
            interior = np.setdiff1d(indptr[1:-1], [0, indices.shape[0]])
            rising = np.diff(weights) > 0
            rising[interior - 1] = False
            if np.any(rising):
                raise ValueError("neighbor lists must be sorted by descending weight")
        object.__setattr__(self, "indptr", _freeze(indptr))
        object.__setattr__(self, "indices", _freeze(indices))
        object.__setattr__(self, "weights", _freeze(weights))

    def neighbors(self, i: int):
        """(indices, weights) views for node i."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    @property
    def n_edges(self) -> int:
        return int(self.indices.shape[0])

    def propagate(self, values: np.ndarray) -> np.ndarray:
        """Weighted neighbor sum: row i of the result is sum_j w_ij * values[j].

        Accumulates each node's neighbors left to right in stored order,
        so the result is independent of thread count.
        """
        from scipy.sparse import csr_matrix

        csr = getattr(self, "_csr", None)
        if csr is None:
            csr = csr_matrix(
                (self.weights, self.indices, self.indptr),
                shape=(self.n_nodes, self.n_nodes),
            )
            object.__setattr__(self, "_csr", csr)
        return csr @ values


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Labeled shots: embeddings plus one class index per row."""

    embeddings: EmbeddingMatrix
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != self.embeddings.n_rows:
            raise DimensionMismatch(
                "labels must be a vector with one entry per support row"
            )
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n_rows(self) -> int:
        return self.embeddings.n_rows


@dataclass(frozen=True)
class Hyperparams:
    """Solver knobs. Defaults reproduce the reference zero-shot configuration."""

    kl_weight: float = 1.0        # weight of the text-prior KL penalty
    support_weight: float = 0.0   # weight of the labeled-shot likelihood term
    outer_iters: int = 10
    inner_z_iters: int = 5
    k_nn: int = 3
    init_top_m: int = 8           # confident samples averaged per class at init
    symmetrize_graph: bool = False

    def __post_init__(self):
        if self.kl_weight < 0 or self.support_weight < 0:
            raise ValueError("term weights must be non-negative")
        if self.outer_iters < 0 or self.inner_z_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.k_nn < 0:
            raise ValueError("k_nn must be non-negative")
        if self.init_top_m < 1:
            raise ValueError("init_top_m must be at least 1")


FEWSHOT_KL_WEIGHT = 0.5
GAMMA_GRID = (0.002, 0.01, 0.02, 0.2)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    """One transduction problem: query embeddings, class-text prototypes,
    optional labeled support set, softmax temperature, and hyper-parameters.

    The class count K is the number of text-prototype rows.
    """

    query: EmbeddingMatrix
    text: EmbeddingMatrix
    support: Optional[SupportSet] = None
    temperature: float = 30.0
    hyper: Hyperparams = field(default_factory=Hyperparams)

    @property
    def n_classes(self) -> int:
        return self.text.n_rows

    @property
    def n_query(self) -> int:
        return self.query.n_rows

    @property
    def n_support(self) -> int:
        return 0 if self.support is None else self.support.n_rows

    def with_hyper(self, **kwargs) -> "TaskSpec":
        return replace(self, hyper=replace(self.hyper, **kwargs))


def validate_task(spec: TaskSpec) -> TaskSpec:
    """Check every cross-field invariant of a task; returns the spec unchanged.

    Embedding rows are already unit-normalized by EmbeddingMatrix (rows more
    than NORM_GATE from unit norm are rejected at construction), so a second
    validation is a no-op, which makes this function idempotent.
    """
    if spec.text.dim != spec.query.dim:
        raise DimensionMismatch(
            f"text dim {spec.text.dim} != query dim {spec.query.dim}"
        )
    if spec.support is not None:
        if spec.support.embeddings.dim != spec.query.dim:
            raise DimensionMismatch(
                f"support dim {spec.support.embeddings.dim} != query dim {spec.query.dim}"
            )
        labels = spec.support.labels
        if labels.size and (labels.min() < 0 or labels.max() >= spec.n_classes):
            raise LabelOutOfRange(
                f"support labels must lie in [0, {spec.n_classes})"
            )
    if not (spec.temperature > 0):
        raise ValueError("temperature must be positive")
    return spec
