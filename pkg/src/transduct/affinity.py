"""Sparse k-nearest-neighbor affinity graph over unit-norm embeddings.

Exact construction: all pairwise cosines are evaluated in fixed-size row
blocks (O(N^2 d) time, O(block * N) transient memory), then truncated to
the k most similar other rows. Weights are cosines clipped at zero.
"""

from __future__ import annotations

import numpy as np

from .types import AffinityGraph, EmbeddingMatrix

_BLOCK_ROWS = 512


def build_knn(embeddings: EmbeddingMatrix, k: int, symmetrize: bool = False) -> AffinityGraph:
    """Directed graph linking each row to its k most cosine-similar others.

    Neighbors are selected by raw cosine (ties to the lower index) and
    stored by descending weight max(0, cosine). Self-edges are excluded;
    k >= N-1 degrades to the full graph. With symmetrize=True the edge set
    is the union of both directions, so per-node lists may reach 2k.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    data = embeddings.data
    n = data.shape[0]
    k_eff = min(k, n - 1)
    if k_eff == 0:
        empty = np.zeros(0)
        return AffinityGraph(
            indptr=np.zeros(n + 1, dtype=np.int64),
            indices=empty.astype(np.int64),
            weights=empty,
            n_nodes=n,
            max_degree=0,
        )

    neighbor_idx = np.empty((n, k_eff), dtype=np.int64)
    neighbor_w = np.empty((n, k_eff))
    for lo in range(0, n, _BLOCK_ROWS):
        hi = min(lo + _BLOCK_ROWS, n)
        sims = data[lo:hi] @ data.T
        sims[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        # stable sort so equal similarities resolve to the lower index
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k_eff]
        neighbor_idx[lo:hi] = order
        neighbor_w[lo:hi] = np.maximum(0.0, np.take_along_axis(sims, order, axis=1))

    if not symmetrize:
        return AffinityGraph(
            indptr=np.arange(n + 1, dtype=np.int64) * k_eff,
            indices=neighbor_idx.reshape(-1),
            weights=neighbor_w.reshape(-1),
            n_nodes=n,
            max_degree=k_eff,
        )

    src = np.repeat(np.arange(n, dtype=np.int64), k_eff)
    dst = neighbor_idx.reshape(-1)
    w = neighbor_w.reshape(-1)
    # union with the reversed edges; the weight of (j, i) equals that of
    # (i, j) because the clipped cosine is symmetric
    src2 = np.concatenate([src, dst])
    dst2 = np.concatenate([dst, src])
    w2 = np.concatenate([w, w])
    keys, first = np.unique(src2 * n + dst2, return_index=True)
    src2, dst2, w2 = src2[first], dst2[first], w2[first]
    order = np.lexsort((dst2, -w2, src2))
    src2, dst2, w2 = src2[order], dst2[order], w2[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src2, minlength=n), out=indptr[1:])
    return AffinityGraph(
        indptr=indptr,
        indices=dst2,
        weights=w2,
        n_nodes=n,
        max_degree=2 * k_eff,
    )


def dump_edges(graph: AffinityGraph, path) -> None:
    """Write one 'i j w' line per stored edge, in storage order."""
    with open(path, "w", encoding="ascii") as fh:
        for i in range(graph.n_nodes):
            idx, w = graph.neighbors(i)
            for j, weight in zip(idx, w):
                fh.write(f"{i} {j} {weight:.9g}\n")
