"""Independent reference implementations used only by the test suite.

Nothing here shares code with the production modules; that independence is
the point. These routines favor directness over speed and are meant for
small instances (N <= 200, K <= 10).
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


def em_reference(
    features: np.ndarray,
    n_classes: int,
    means0: np.ndarray,
    variances0: np.ndarray,
    iters: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Textbook EM for a balanced Gaussian mixture with a fixed shared
    diagonal covariance: alternates the E step and the mean M step.

    Returns the responsibilities and means after `iters` rounds.
    """
    features = np.asarray(features, dtype=np.float64)
    means = np.asarray(means0, dtype=np.float64).copy()
    variances = np.asarray(variances0, dtype=np.float64)
    n, d = features.shape
    resp = np.full((n, n_classes), 1.0 / n_classes)
    const = -0.5 * (d * np.log(2.0 * np.pi) + np.sum(np.log(variances)))
    for _ in range(iters):
        log_dens = np.empty((n, n_classes))
        for k in range(n_classes):
            diff = features - means[k]
            log_dens[:, k] = const - 0.5 * np.sum(diff * diff / variances, axis=1)
        log_dens += np.log(1.0 / n_classes)
        resp = np.exp(log_dens - logsumexp(log_dens, axis=1, keepdims=True))
        for k in range(n_classes):
            means[k] = resp[:, k] @ features / resp[:, k].sum()
    return resp, means


def project_simplex(points: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, k = points.shape
    u = -np.sort(-points, axis=1)
    css = np.cumsum(u, axis=1)
    ks = np.arange(1, k + 1)
    cond = u + (1.0 - css) / ks > 0.0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = (css[np.arange(n), rho] - 1.0) / (rho + 1.0)
    return np.maximum(points - theta[:, None], 0.0)


def simplex_pg_minimize(
    linear_coeffs: np.ndarray,
    steps: int = 100_000,
    step_size: float = 1e-3,
) -> np.ndarray:
    """Minimize z . a + z . log z over the simplex by projected gradient.

    Accepts a single coefficient vector or a batch of rows (each row is an
    independent problem). The step size halves every tenth of the budget:
    the entropy term's curvature grows like 1/z near the boundary, so a
    fixed step oscillates around small coordinates while the decayed one
    settles. log is floored so coordinates clipped to zero stay there when
    their coefficient is large.
    """
    a = np.atleast_2d(np.asarray(linear_coeffs, dtype=np.float64))
    z = np.full_like(a, 1.0 / a.shape[1])
    phase = max(1, steps // 10)
    for t in range(steps):
        eta = step_size * 0.5 ** (t // phase)
        grad = a + np.log(np.maximum(z, 1e-12)) + 1.0
        z = project_simplex(z - eta * grad)
    if np.asarray(linear_coeffs).ndim == 1:
        return z[0]
    return z


def finite_diff_grad(fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Component-wise central-difference gradient of a scalar function."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(point)
    flat = grad.reshape(-1)
    base = point.copy().reshape(-1)
    for i in range(base.size):
        saved = base[i]
        base[i] = saved + h
        up = fn(base.reshape(point.shape))
        base[i] = saved - h
        down = fn(base.reshape(point.shape))
        base[i] = saved
        flat[i] = (up - down) / (2.0 * h)
    return grad


def brute_force_knn(data: np.ndarray, k: int) -> list[list[tuple[int, float]]]:
    """All-pairs cosine kNN by exhaustive sort; for cross-checking graphs.

    Returns, per row, the k most similar other rows as (index, clipped
    weight) pairs, ties broken by the lower index.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    out = []
    for i in range(n):
        sims = [(float(data[i] @ data[j]), j) for j in range(n) if j != i]
        sims.sort(key=lambda t: (-t[0], t[1]))
        out.append([(j, max(0.0, s)) for s, j in sims[: min(k, n - 1)]])
    return out
