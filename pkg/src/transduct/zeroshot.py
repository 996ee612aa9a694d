"""Text-driven soft labels and prototype initialization.

All functions are pure and deterministic; ranking ties are broken by the
lower sample index.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, EmptyClass
from .types import EmbeddingMatrix, SimplexAssignments


def row_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, computed with max subtraction so large logits
    cannot overflow."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    out = np.exp(shifted)
    out /= out.sum(axis=1, keepdims=True)
    return out


def compute_soft_labels(
    query: EmbeddingMatrix, text: EmbeddingMatrix, temperature: float
) -> SimplexAssignments:
    """Temperature-scaled softmax of query/prototype cosine similarities.

    Entry (i, k) is exp(t * f_i . t_k) normalized over k. A temperature of 0
    yields uniform rows.
    """
    if query.dim != text.dim:
        raise DimensionMismatch(f"query dim {query.dim} != text dim {text.dim}")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    logits = temperature * (query.data @ text.data.T)
    return SimplexAssignments(row_softmax(logits))


def hard_predict(assignments: SimplexAssignments) -> np.ndarray:
    """Per-row argmax class; ties go to the lowest class index."""
    return np.argmax(assignments.z, axis=1)


def init_prototypes_topk(
    query: EmbeddingMatrix, soft_labels: SimplexAssignments, top_m: int
) -> np.ndarray:
    """Class means over each class's top-m most confident query samples.

    Samples are ranked per class by their soft-label column, descending,
    with index as tiebreaker; a sample may be picked by several classes.
    Returns a K x d array (not renormalized).
    """
    if top_m < 1:
        raise ValueError("top_m must be at least 1")
    n, k = soft_labels.n_rows, soft_labels.n_classes
    take = min(top_m, n)
    # stable sort on the negated column keeps lower indices first among ties
    order = np.argsort(-soft_labels.z, axis=0, kind="stable")[:take]
    means = np.empty((k, query.dim))
    for cls in range(k):
        means[cls] = query.data[order[:, cls]].mean(axis=0)
    return means


def init_prototypes_support(support: EmbeddingMatrix, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Class-wise arithmetic mean of the labeled shot embeddings.

    Every class in [0, n_classes) must own at least one shot.
    """
    labels = np.asarray(labels, dtype=np.int64)
    means = np.empty((n_classes, support.dim))
    for cls in range(n_classes):
        rows = support.data[labels == cls]
        if rows.shape[0] == 0:
            raise EmptyClass(f"class {cls} has no labeled shot")
        means[cls] = rows.mean(axis=0)
    return means
