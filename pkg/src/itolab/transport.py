"""Empirical and closed-form Wasserstein-2 machinery.

Estimators over weighted sample clouds:

* exact 1-D transport through sorted samples / quantile functions,
* exact squared-Euclidean assignment for small clouds in any dimension,
* sliced (random 1-D projections) for large clouds,
* the Bures closed form between Gaussian laws,

plus the entropy-to-W2 conversion w2 <= c_w (kl^{1/2} + (kl/2)^{1/4}) and
its explicit prefactor eta^{gamma/2} sigma1 e^{m0 t} sqrt(2 d / m0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import AssumptionConstants
from .errors import DataError, PreconditionError, ValidationError
from .rng import RngStream

MAX_ASSIGNMENT = 4096
_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """A weighted point cloud in R^d; weights default to uniform."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValidationError(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points must be finite")
        object.__setattr__(self, "points", pts)
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pts.shape[0],) or np.any(w < 0):
                raise ValidationError("weights must be nonnegative, one per point")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise ValidationError(f"weights must sum to 1 +- {_WEIGHT_TOL}, got {w.sum()}")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, atol=1e-15))


@dataclass(frozen=True)
class W2Estimate:
    value: float
    method: str
    stderr: float
    n_used: int


def _w2_sq_sorted_1d(x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared gap between equally weighted sorted samples."""
    return float(np.mean((x - y) ** 2))


def _w2_sq_quantile_1d(x, wx, y, wy) -> float:
    """Squared 1-D W2 between weighted samples via quantile integration."""
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    xs, cwx = x[ix], np.cumsum(wx[ix])
    ys, cwy = y[iy], np.cumsum(wy[iy])
    edges = np.unique(np.concatenate([[0.0], cwx, cwy, [1.0]]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    seg = np.diff(edges)
    qx = xs[np.minimum(np.searchsorted(cwx, mids), xs.size - 1)]
    qy = ys[np.minimum(np.searchsorted(cwy, mids), ys.size - 1)]
    return float(np.sum(seg * (qx - qy) ** 2))


def w2_exact_1d(
    a: EmpiricalMeasure,
    b: EmpiricalMeasure,
    stream: RngStream | None = None,
    n_boot: int = 64,
) -> W2Estimate:
    """Exact 1-D W2; the sorted pairing realizes the optimal transport.

    Equal-size uniform clouds take the fast sorted path (stable sort, ties
    kept in input order); anything else goes through weighted quantile
    integration.  A bootstrap standard error is attached when a stream is
    supplied.
    """
    if a.dim != 1 or b.dim != 1:
        raise DataError(f"w2_exact_1d needs 1-D data, got dims {a.dim} and {b.dim}")
    xa, xb = a.points[:, 0], b.points[:, 0]
    if a.n == b.n and a.is_uniform() and b.is_uniform():
        xs = np.sort(xa, kind="stable")
        ys = np.sort(xb, kind="stable")
        value = np.sqrt(_w2_sq_sorted_1d(xs, ys))
    else:
        value = np.sqrt(_w2_sq_quantile_1d(xa, a.weights, xb, b.weights))
    stderr = float("nan")
    if stream is not None and n_boot > 0:
        g = stream.generator()
        reps = np.empty(n_boot)
        for i in range(n_boot):
            ra = xa[g.integers(0, a.n, a.n)]
            rb = xb[g.integers(0, b.n, b.n)]
            reps[i] = np.sqrt(_w2_sq_sorted_1d(np.sort(ra), np.sort(rb)))
        stderr = float(np.std(reps, ddof=1))
    return W2Estimate(float(value), "exact-1d", stderr, a.n + b.n)


def w2_exact_assignment(a: EmpiricalMeasure, b: EmpiricalMeasure) -> W2Estimate:
    """Exact W2 by solving the n x n squared-Euclidean assignment problem.

    Solved with the shortest-augmenting-path method (scipy's exact solver);
    capped at n = 4096 where the O(n^3) cost is still desk-scale.
    """
    if a.n != b.n:
        raise DataError(f"assignment estimator needs equal counts, got {a.n} and {b.n}")
    if not (a.is_uniform() and b.is_uniform()):
        raise DataError("assignment estimator supports uniform weights only")
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.n > MAX_ASSIGNMENT:
        raise DataError(
            f"assignment estimator capped at n = {MAX_ASSIGNMENT} (got {a.n}); "
            "use w2_sliced for larger clouds"
        )
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    value = float(np.sqrt(cost[rows, cols].mean()))
    return W2Estimate(value, "exact-assignment", float("nan"), a.n + b.n)


def w2_sliced(
    a: EmpiricalMeasure,
    b: EmpiricalMeasure,
    n_projections: int,
    stream: RngStream,
) -> W2Estimate:
    """Root-mean of squared 1-D W2 over uniformly random unit directions.

    Every projection contracts distances, so the sliced value lower-bounds
    the exact W2 (an isotropic shift by v gives ||v|| / sqrt(d)).
    """
    if n_projections < 16:
        raise PreconditionError(f"need at least 16 projections, got {n_projections}")
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    g = stream.generator()
    dirs = g.standard_normal((n_projections, a.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = a.points @ dirs.T
    pb = b.points @ dirs.T
    sq = np.empty(n_projections)
    uniform_fast = a.n == b.n and a.is_uniform() and b.is_uniform()
    for j in range(n_projections):
        if uniform_fast:
            sq[j] = _w2_sq_sorted_1d(np.sort(pa[:, j]), np.sort(pb[:, j]))
        else:
            sq[j] = _w2_sq_quantile_1d(pa[:, j], a.weights, pb[:, j], b.weights)
    mean_sq = float(np.mean(sq))
    value = float(np.sqrt(mean_sq))
    se_sq = float(np.std(sq, ddof=1) / np.sqrt(n_projections))
    stderr = se_sq / (2.0 * value) if value > 0 else 0.0
    return W2Estimate(value, "sliced", stderr, a.n + b.n)


def _psd_sqrt(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError(f"{what} covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-10 * max(1.0, np.abs(cov).max())):
        raise ValidationError(f"{what} covariance must be symmetric")
    vals, vecs = np.linalg.eigh(cov)
    tol = 1e-10 * max(1.0, float(vals.max(initial=0.0)))
    if vals.min(initial=0.0) < -tol:
        raise ValidationError(f"{what} covariance must be positive semi-definite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def w2_gaussian(p, q) -> float:
    """Closed-form W2 between Gaussian laws (objects with .mean and .cov).

    sqrt(||m1 - m2||^2 + Tr(C1 + C2 - 2 (C2^{1/2} C1 C2^{1/2})^{1/2})).
    """
    m1 = np.atleast_1d(np.asarray(p.mean, dtype=float))
    m2 = np.atleast_1d(np.asarray(q.mean, dtype=float))
    c1 = np.atleast_2d(np.asarray(p.cov, dtype=float))
    c2 = np.atleast_2d(np.asarray(q.cov, dtype=float))
    s2 = _psd_sqrt(c2, "second")
    _psd_sqrt(c1, "first")  # validation only
    inner = s2 @ c1 @ s2
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    gap_sq = float((m1 - m2) @ (m1 - m2))
    bures_sq = float(np.trace(c1) + np.trace(c2) - 2.0 * cross)
    return float(np.sqrt(max(gap_sq + bures_sq, 0.0)))


def kl_to_w2(kl: float, c_w: float) -> float:
    """Convert a relative-entropy bound into a W2 bound.

    w2 <= c_w * (kl^{1/2} + (kl/2)^{1/4}).
    """
    if kl < 0:
        raise DataError(f"relative entropy must be >= 0, got {kl}")
    if c_w < 0:
        raise DataError(f"prefactor must be >= 0, got {c_w}")
    return c_w * (np.sqrt(kl) + (kl / 2.0) ** 0.25)


def c_w_bound(constants: AssumptionConstants, t: float, eta: float) -> float:
    """Explicit entropy-to-W2 prefactor eta^{gamma/2} sigma1 e^{m0 t} sqrt(2d/m0)."""
    if t < 0:
        raise PreconditionError(f"time must be >= 0, got {t}")
    if constants.m0 == 0:
        raise DataError("degenerate constant: the prefactor formula divides by m0 = 0")
    with np.errstate(over="ignore"):
        return float(
            eta ** (constants.gamma / 2.0)
            * constants.sigma1
            * np.exp(constants.m0 * t)
            * np.sqrt(2.0 * constants.dim / constants.m0)
        )


def sampling_floor(points: np.ndarray, stream: RngStream | None = None) -> float:
    """Self-W2 of two halves of one cloud: the estimator's resolution limit.

    The split is deterministic (first half vs second half) so floors are
    reproducible; pass a stream to shuffle first when the cloud ordering is
    not already exchangeable.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0] // 2
    if n < 2:
        raise DataError("sampling floor needs at least 4 points")
    if stream is not None:
        pts = pts[stream.generator().permutation(pts.shape[0])]
    a = EmpiricalMeasure(pts[:n])
    b = EmpiricalMeasure(pts[n : 2 * n])
    if pts.shape[1] == 1:
        return w2_exact_1d(a, b).value
    if n <= MAX_ASSIGNMENT:
        return w2_exact_assignment(a, b).value
    return w2_sliced(a, b, 128, stream or RngStream(0)).value
