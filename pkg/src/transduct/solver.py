"""Block optimizer for the transductive assignment objective.

The objective couples three blocks of variables: per-sample class
assignments constrained to the probability simplex, class means, and one
shared diagonal covariance. Each outer iteration runs several simultaneous
(Jacobi) assignment sweeps, then refreshes the means and variances with
their closed-form minimizers. Assignment rows belonging to labeled support
samples stay frozen at their one-hot labels.

Two flavors of the objective are exposed:

* ``normalized``: the GMM term is averaged over the query set and the
  support term carries weight gamma / n_support.
* ``update_consistent``: every query sample contributes at unit weight and
  the support term carries gamma * n_query / n_support. This is the exact
  Lyapunov function of the implemented updates: the assignment sweep
  minimizes its per-sample convex surrogate, and the mean/variance formulas
  are its stationary points. Descent diagnostics use this flavor.

The two differ by a positive rescaling of the likelihood terms relative to
the graph and prior terms, so they share the mean/variance stationary
points but weigh the assignment trade-off differently.

Log-density values omit the constant -(d/2) log(2 pi): it cancels in every
row softmax and offsets both objectives by an assignment-independent
constant, so tests compare objective differences rather than absolute
likelihoods.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .affinity import build_knn
from .types import (
    VAR_FLOOR,
    AffinityGraph,
    EmbeddingMatrix,
    GmmParams,
    SimplexAssignments,
    TaskSpec,
    validate_task,
)
from .zeroshot import (
    compute_soft_labels,
    init_prototypes_support,
    init_prototypes_topk,
    row_softmax,
)

# Floor applied inside log() so exactly-zero prior entries stay finite.
PRIOR_LOG_FLOOR = 1e-300

# Rows are processed in fixed-size chunks regardless of the thread count,
# so results are bitwise identical for any --threads value.
_CHUNK_ROWS = 8192

# Classes whose mean-update denominator falls below this keep their
# previous prototype instead of dividing by ~0.
_EMPTY_CLASS_EPS = 1e-12


@dataclass
class TraceRow:
    iteration: int
    block: str
    normalized: float
    update_consistent: float


@dataclass
class SolverState:
    """Everything the block updates read and write.

    Rows 0..n_support-1 of ``z`` are the one-hot support labels and are
    never modified; the remaining rows are the query assignments.
    ``features`` stacks support embeddings above query embeddings in the
    same order as ``z`` and the graph nodes.
    """

    z: SimplexAssignments
    gmm: GmmParams
    soft_labels: SimplexAssignments
    graph: AffinityGraph
    features: np.ndarray
    n_support: int
    trace: list = field(default_factory=list)
    _log_probs: Optional[np.ndarray] = None
    _log_prior: Optional[np.ndarray] = None

    @property
    def objective_trace(self) -> list:
        return [row.update_consistent for row in self.trace]

    @property
    def n_query(self) -> int:
        return self.features.shape[0] - self.n_support

    def log_probs(self, threads: int = 1) -> np.ndarray:
        if self._log_probs is None:
            self._log_probs = gmm_log_probs(self.features, self.gmm, threads=threads)
        return self._log_probs

    def log_prior(self) -> np.ndarray:
        if self._log_prior is None:
            self._log_prior = np.log(np.maximum(self.soft_labels.z, PRIOR_LOG_FLOOR))
        return self._log_prior

    def invalidate_log_probs(self) -> None:
        self._log_probs = None


def _map_row_chunks(apply, n_rows: int, threads: int) -> None:
    """Run apply(lo, hi) over fixed chunk boundaries, optionally in parallel.

    Chunk boundaries never depend on the thread count; each call writes a
    disjoint output slice, so the merged result is deterministic.
    """
    bounds = [(lo, min(lo + _CHUNK_ROWS, n_rows)) for lo in range(0, n_rows, _CHUNK_ROWS)]
    if threads <= 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            apply(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda b: apply(*b), bounds))


def gmm_log_probs(features, gmm: GmmParams, threads: int = 1) -> np.ndarray:
    """Per-sample, per-class Gaussian log-densities under a shared diagonal
    covariance, without the 2*pi constant.

    Entry (i, k) is -0.5 * sum_d [log var_d + (f_id - mean_kd)^2 / var_d].
    """
    data = features.data if isinstance(features, EmbeddingMatrix) else np.asarray(features)
    inv_var = 1.0 / gmm.variances
    log_det = float(np.log(gmm.variances).sum())
    scaled_means = gmm.means * inv_var
    mean_sq = np.einsum("kd,kd->k", gmm.means, scaled_means)
    out = np.empty((data.shape[0], gmm.n_classes))

    def fill(lo, hi):
        block = data[lo:hi]
        feat_sq = np.einsum("nd,d->n", block * block, inv_var)
        cross = block @ scaled_means.T
        out[lo:hi] = -0.5 * (log_det + feat_sq[:, None] - 2.0 * cross + mean_sq[None, :])

    _map_row_chunks(fill, data.shape[0], threads)
    return out


def z_step(state: SolverState, spec: TaskSpec, threads: int = 1) -> SimplexAssignments:
    """One simultaneous sweep of the query assignments.

    Every query row i becomes the softmax over classes of

        kl_weight * log prior_i + log_density_i + sum_j w_ij z_j

    where the neighbor sum reads the previous iterate for all j (support
    rows contribute their one-hot labels). The softmax is the exact
    minimizer of the per-row convex surrogate, so each sweep cannot
    increase the surrogate objective. Support rows are returned untouched.
    """
    n_s = state.n_support
    z_prev = state.z.z
    neighbor = state.graph.propagate(z_prev)
    logits = (
        spec.hyper.kl_weight * state.log_prior()
        + state.log_probs(threads)[n_s:]
        + neighbor[n_s:]
    )
    z_new = np.empty_like(z_prev)
    z_new[:n_s] = z_prev[:n_s]

    def fill(lo, hi):
        z_new[n_s + lo : n_s + hi] = row_softmax(logits[lo:hi])

    _map_row_chunks(fill, logits.shape[0], threads)
    return SimplexAssignments(z_new)


def _group_moments(state: SolverState, spec: TaskSpec):
    """Support- and query-weighted first moments shared by the mean and
    variance updates. Returns (weighted z-mass per class, weighted z'F,
    weighted sum of z row-sums times f^2)."""
    z = state.z.z
    feats = state.features
    n_s, n_q = state.n_support, state.n_query
    gamma = spec.hyper.support_weight

    zq, fq = z[n_s:], feats[n_s:]
    mass = zq.sum(axis=0) / n_q
    first = (zq.T @ fq) / n_q
    row_tot = zq.sum(axis=1)
    sq = (row_tot @ (fq * fq)) / n_q
    if n_s and gamma > 0:
        zs, fs = z[:n_s], feats[:n_s]
        w = gamma / n_s
        mass = mass + w * zs.sum(axis=0)
        first = first + w * (zs.T @ fs)
        sq = sq + w * (zs.sum(axis=1) @ (fs * fs))
    return mass, first, sq


def mu_step(state: SolverState, spec: TaskSpec) -> np.ndarray:
    """Closed-form mean update: per class, the support/query weighted
    average of embeddings under the current assignments.

    A class whose total assignment mass is ~0 keeps its previous mean.
    """
    mass, first, _ = _group_moments(state, spec)
    means = state.gmm.means.copy()
    live = mass >= _EMPTY_CLASS_EPS
    means[live] = first[live] / mass[live, None]
    return means


def sigma_step(state: SolverState, spec: TaskSpec) -> np.ndarray:
    """Closed-form shared-variance update, floored at VAR_FLOOR.

    Expects the means in ``state.gmm`` to be the ones produced this outer
    iteration (block order: assignments, means, variances).
    """
    mass, first, sq = _group_moments(state, spec)
    means = state.gmm.means
    gamma = spec.hyper.support_weight
    scatter = sq - 2.0 * np.einsum("kd,kd->d", means, first) + np.einsum(
        "kd,kd,k->d", means, means, mass
    )
    return np.maximum(scatter / (gamma + 1.0), VAR_FLOOR)


def _entropy_sum(z: np.ndarray) -> float:
    """sum of z * log z with the 0 log 0 = 0 convention."""
    return float(np.sum(z * np.log(np.maximum(z, PRIOR_LOG_FLOOR))))


def _objective_terms(state: SolverState, spec: TaskSpec):
    """Raw objective pieces: query likelihood, prior penalty, graph term,
    support likelihood. The graph term sums w_ij z_i . z_j over the stored
    directed edges (each ordered pair once)."""
    n_s = state.n_support
    z = state.z.z
    zq = z[n_s:]
    log_p = state.log_probs()

    nll_query = -float(np.sum(zq * log_p[n_s:]))
    kl = _entropy_sum(zq) - spec.hyper.kl_weight * float(np.sum(zq * state.log_prior()))
    laplacian = -float(np.sum(z * state.graph.propagate(z)))
    nll_support = 0.0
    if n_s and spec.hyper.support_weight > 0:
        nll_support = -float(np.sum(z[:n_s] * log_p[:n_s]))
    return nll_query, kl, laplacian, nll_support


def _assemble(terms, state: SolverState, spec: TaskSpec, which: str) -> float:
    nll_query, kl, laplacian, nll_support = terms
    n_s, n_q = state.n_support, state.n_query
    gamma = spec.hyper.support_weight
    support = gamma / n_s * nll_support if (n_s and gamma > 0) else 0.0
    if which == "normalized":
        return nll_query / n_q + kl + laplacian + support
    return nll_query + kl + laplacian + n_q * support


def objective(state: SolverState, spec: TaskSpec, which: str = "update_consistent") -> float:
    """Evaluate the full objective for the current state.

    ``which`` selects between the two weightings described in the module
    docstring.
    """
    if which not in ("normalized", "update_consistent"):
        raise ValueError(f"unknown objective flavor {which!r}")
    return _assemble(_objective_terms(state, spec), state, spec, which)


def init_state(spec: TaskSpec, threads: int = 1) -> SolverState:
    """Build the initial solver state for a validated task.

    Soft labels come from the temperature softmax of query/text cosines;
    the graph spans support-then-query rows; means start from labeled
    class averages (few-shot) or each class's most confident queries
    (zero-shot); every variance starts at 1/d; query assignments start at
    the soft labels and support rows at their one-hot labels.
    """
    spec = validate_task(spec)
    soft = compute_soft_labels(spec.query, spec.text, spec.temperature)

    if spec.support is not None:
        features = np.concatenate([spec.support.embeddings.data, spec.query.data])
        means = init_prototypes_support(
            spec.support.embeddings, spec.support.labels, spec.n_classes
        )
        z0 = np.concatenate(
            [SimplexAssignments.one_hot(spec.support.labels, spec.n_classes).z, soft.z]
        )
    else:
        features = spec.query.data
        means = init_prototypes_topk(spec.query, soft, spec.hyper.init_top_m)
        z0 = soft.z.copy()

    graph = build_knn(
        EmbeddingMatrix(features), spec.hyper.k_nn, symmetrize=spec.hyper.symmetrize_graph
    )
    variances = np.full(spec.query.dim, 1.0 / spec.query.dim)
    return SolverState(
        z=SimplexAssignments(z0),
        gmm=GmmParams(means, variances),
        soft_labels=soft,
        graph=graph,
        features=features,
        n_support=spec.n_support,
    )


def run(
    spec: TaskSpec,
    threads: int = 1,
    record_trace: bool = True,
    block_callback: Optional[Callable[[str, int, SolverState], None]] = None,
) -> tuple[SimplexAssignments, SolverState]:
    """Full transduction pipeline; returns query assignments and final state.

    Runs ``outer_iters`` rounds of ``inner_z_iters`` assignment sweeps
    followed by one mean and one variance refresh. With record_trace, both
    objective flavors are logged after every block update. The final
    prediction for query row i is the argmax of its assignment row.
    """
    state = init_state(spec, threads=threads)

    def record(iteration: int, block: str) -> None:
        if record_trace:
            terms = _objective_terms(state, spec)
            state.trace.append(
                TraceRow(
                    iteration,
                    block,
                    _assemble(terms, state, spec, "normalized"),
                    _assemble(terms, state, spec, "update_consistent"),
                )
            )
        if block_callback is not None:
            block_callback(block, iteration, state)

    record(0, "init")
    for it in range(1, spec.hyper.outer_iters + 1):
        for _ in range(spec.hyper.inner_z_iters):
            state.z = z_step(state, spec, threads=threads)
            record(it, "z")
        means = mu_step(state, spec)
        state.gmm = GmmParams(means, state.gmm.variances)
        state.invalidate_log_probs()
        record(it, "mu")
        variances = sigma_step(state, spec)
        state.gmm = GmmParams(means, variances)
        state.invalidate_log_probs()
        record(it, "sigma")

    query_assignments = SimplexAssignments(state.z.z[state.n_support :])
    return query_assignments, state
