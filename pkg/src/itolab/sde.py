"""Reference diffusions and the chain-to-diffusion interpolation cascade.

The target diffusion is dZ = b(Z) dt + sqrt(eta^gamma) sigma(Z) dW, solved
here with fine-grid Euler-Maruyama (step eta / refinement).  For the linear
mean-reverting case the transition law is known in closed form and serves
as the analytic oracle.

The cascade jointly simulates, on one probability space,

  X      the fine chain,
  Y^X    its window-coupled companion (coarse chain),
  Y_t    the companion embedded in continuous time: drift and covariance
         frozen over each coarse window ("ladder" coefficients), driven by
         a Brownian path whose window totals are the companion's Gaussian
         shocks,
  Z^Y_t  a corrector diffusion with state-fed coefficients, the window
         drift term, and an extra contraction L1 (Y_t - Z^Y_t) dt,

and reports the mean-square gap of each consecutive pair, ready to be
compared against the explicit constants of the core module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _exec
from .chain import (
    ABORT_DIVERGED_FRACTION,
    DIVERGENCE_NORM,
    ChainSpec,
    Ensemble,
    _advance,
    _ensure_table,
    _mix,
    _raw_noise,
    _steps_for_horizon,
    apply_coefficient,
)
from .core import AssumptionConstants, ConstantsBundle, compute_constants, corrector_gain_threshold
from .errors import DivergenceError, PreconditionError, ValidationError
from .noise import couple_gaussian
from .rng import RngStream

MIN_REFINEMENT = 16


@dataclass(frozen=True)
class GaussianLaw:
    """A Gaussian law N(mean, cov); cov symmetric PSD."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValidationError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-10 * max(1.0, np.abs(cov).max())):
            raise ValidationError("cov must be symmetric")
        if np.linalg.eigvalsh(cov).min(initial=0.0) < -1e-10 * max(1.0, np.abs(cov).max()):
            raise ValidationError("cov must be positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def sample(self, n: int, stream: RngStream) -> np.ndarray:
        g = stream.generator()
        vals, vecs = np.linalg.eigh(self.cov)
        root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        return self.mean[None, :] + g.standard_normal((n, self.mean.size)) @ root.T


@dataclass
class DiffusionSpec:
    """The diffusion sharing drift and covariance coefficient with a chain."""

    drift: Callable[[np.ndarray], np.ndarray]
    cov_coeff: object
    gamma: int
    eta_for_scale: float
    x0: np.ndarray
    constants: AssumptionConstants

    @classmethod
    def from_chain(cls, spec: ChainSpec) -> "DiffusionSpec":
        return cls(
            drift=spec.drift,
            cov_coeff=spec.cov_coeff,
            gamma=spec.gamma,
            eta_for_scale=spec.eta,
            x0=spec.x0,
            constants=spec.constants,
        )

    @property
    def dim(self) -> int:
        return self.constants.dim


def simulate_reference(
    spec: DiffusionSpec,
    n_traj: int,
    horizon_t: float,
    refinement: int = 64,
    record_grid=None,
    root: RngStream = RngStream(0),
    threads: int | None = None,
) -> Ensemble:
    """Euler-Maruyama paths at step eta/refinement, recorded at chain times.

    The grid is in chain-step units (multiples of eta); refinement >= 16 so
    the reference error sits well below any gap being measured.
    """
    if refinement < MIN_REFINEMENT:
        raise PreconditionError(f"refinement must be >= {MIN_REFINEMENT}, got {refinement}")
    eta = spec.eta_for_scale
    k_steps = _steps_for_horizon(eta, horizon_t)
    if record_grid is None:
        record_grid = [k_steps]
    grid = np.unique(np.asarray(record_grid, dtype=int))
    if grid.size == 0 or grid[0] < 0 or grid[-1] > k_steps:
        raise PreconditionError(f"record grid {grid} not contained in [0, {k_steps}]")
    h = eta / refinement
    noise_scale = np.sqrt(eta**spec.gamma * h)

    def run(chunk_idx: int, start: int, stop: int):
        return _run_reference_chunk(
            spec, stop - start, k_steps, refinement, grid, h, noise_scale,
            root.child("chunk", chunk_idx),
        )

    parts = _exec.run_chunks(run, n_traj, threads)
    states = np.concatenate([p[0] for p in parts], axis=0)
    diverged = np.concatenate([p[1] for p in parts], axis=0)
    if n_traj and diverged.mean() > ABORT_DIVERGED_FRACTION:
        raise DivergenceError(
            f"{int(diverged.sum())}/{n_traj} reference trajectories exceeded norm "
            f"{DIVERGENCE_NORM:g}"
        )
    return Ensemble(states=states, grid=grid, eta=eta, root=root, diverged=diverged)


def _run_reference_chunk(spec, n, k_steps, refinement, grid, h, noise_scale, stream):
    g = stream.generator()
    d = spec.dim
    z = np.tile(spec.x0, (n, 1))
    diverged = np.zeros(n, dtype=bool)
    states = np.full((n, grid.size, d), np.nan)
    grid_pos = {int(s): i for i, s in enumerate(grid)}
    if 0 in grid_pos:
        states[:, grid_pos[0], :] = z
    for k in range(k_steps):
        for _ in range(refinement):
            xi = g.standard_normal((n, d))
            z = z + h * spec.drift(z) + noise_scale * apply_coefficient(spec.cov_coeff, z, xi)
        bad = ~np.isfinite(z).all(axis=1) | (np.einsum("ij,ij->i", z, z) > DIVERGENCE_NORM**2)
        if bad.any():
            diverged |= bad
            z[diverged] = 0.0
        if (k + 1) in grid_pos:
            pos = grid_pos[k + 1]
            states[:, pos, :] = z
            states[diverged, pos, :] = np.nan
    return states, diverged


def ou_exact_law(
    a: float, s: float, gamma: int, eta: float, x0: np.ndarray | float, t: float
) -> GaussianLaw:
    """Exact time-t law of dZ = -a Z dt + sqrt(eta^gamma) s dW from x0.

    mean = x0 e^{-a t}, cov = eta^gamma s^2 (1 - e^{-2 a t}) / (2 a) I, with
    the Brownian limit t eta^gamma s^2 I as a -> 0.  Either sign of a is
    admitted (a < 0 grows).
    """
    if t < 0:
        raise PreconditionError(f"time must be >= 0, got t={t}")
    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float))
    mean = x0_arr * np.exp(-a * t)
    if a == 0.0:
        var = t * eta**gamma * s**2
    else:
        var = eta**gamma * s**2 * (-np.expm1(-2.0 * a * t)) / (2.0 * a)
    cov = var * np.eye(x0_arr.size)
    return GaussianLaw(mean=mean, cov=cov)


def kl_bound(
    constants: ConstantsBundle, eta: float, s_batch: int, t: float, chi0: int
) -> float:
    """Closed-form relative-entropy bound between corrected and target laws.

    eta^{-gamma} C3 * t * R^2(t) * (eta^{2 alpha}
        + eta^{gamma + beta} (1 - chi0) / S + S eta),
    with R^2(t) = e^{C t} (1 + ||x0||^2).  Formula evaluation only.
    """
    if t < 0:
        raise PreconditionError(f"horizon must be >= 0, got t={t}")
    if t > 0 and abs(t / eta - round(t / eta)) > 1e-9:
        raise PreconditionError(f"horizon t={t} is not a whole number of steps at eta={eta}")
    if t == 0.0:
        return 0.0
    src = constants.source
    delta = (
        eta ** (2.0 * src.alpha)
        + eta ** (src.gamma + src.beta) * (1 - chi0) / s_batch
        + s_batch * eta
    )
    with np.errstate(over="ignore"):
        r_sq = (1.0 + constants.x0_norm_sq) * np.exp(constants.c_growth * t)
        return float(eta ** (-src.gamma) * constants.c3 * t * r_sq * delta)


# --------------------------------------------------------------------------
# Interpolation cascade
# --------------------------------------------------------------------------


def brownian_bridge_path(
    g: np.random.Generator, delta_w: np.ndarray, n_sub: int, dt: float
) -> np.ndarray:
    """Brownian path values over one window, pinned to the window total.

    Returns (n, n_sub + 1, d) with path[:, 0] = 0 and path[:, -1] set to
    delta_w exactly, so the shared coarse increment is reproduced bit for
    bit; interior points follow the Brownian bridge law.
    """
    n, d = delta_w.shape
    incs = np.sqrt(dt) * g.standard_normal((n, n_sub, d))
    path = np.zeros((n, n_sub + 1, d))
    np.cumsum(incs, axis=1, out=path[:, 1:, :])
    total = path[:, -1, :].copy()
    frac = (np.arange(1, n_sub + 1) / n_sub)[None, :, None]
    path[:, 1:, :] += frac * (delta_w - total)[:, None, :]
    path[:, -1, :] = delta_w
    return path


@dataclass
class CascadeReport:
    """Mean-square gaps of the cascade stages with their explicit bounds.

    Gap arrays are indexed by coarse window; interp/corrector entries hold
    the within-window sup over the fine sub-grid.  Bounds are unnormalized
    (already multiplied by the moment envelope at the horizon).
    """

    eta: float
    eta_bar: float
    s_batch: int
    l_window: float
    l1: float
    horizon_t: float
    n_traj: int
    n_diverged: int
    window_gap: np.ndarray
    window_gap_se: np.ndarray
    interp_gap: np.ndarray
    interp_gap_se: np.ndarray
    corrector_gap: np.ndarray
    corrector_gap_se: np.ndarray
    window_bound: float
    interp_bound: float
    r_sq_horizon: float
    bundle: ConstantsBundle

    @property
    def window_sup(self) -> float:
        return float(self.window_gap.max())

    @property
    def interp_sup(self) -> float:
        return float(self.interp_gap.max())

    @property
    def corrector_sup(self) -> float:
        return float(self.corrector_gap.max())

    def rows(self):
        """(stage, t, gap, bound, margin) rows for the CSV report."""
        out = []
        for k, gap in enumerate(self.window_gap):
            out.append(("window", k * self.eta_bar, float(gap), self.window_bound,
                        self.window_bound - float(gap)))
        for k, gap in enumerate(self.interp_gap):
            out.append(("interpolation", (k + 1) * self.eta_bar, float(gap),
                        self.interp_bound, self.interp_bound - float(gap)))
        corr_bound = self.interp_sup
        for k, gap in enumerate(self.corrector_gap):
            out.append(("corrector", (k + 1) * self.eta_bar, float(gap), corr_bound,
                        corr_bound - float(gap)))
        return out


def simulate_interpolation_cascade(
    chain_spec: ChainSpec,
    s_batch: int,
    l_window: float,
    l1: float,
    n_traj: int,
    horizon_t: float,
    root: RngStream = RngStream(0),
    refinement: int = 16,
    quantile_table=None,
    threads: int | None = None,
) -> CascadeReport:
    """Jointly simulate X, Y^X, Y_t and Z^Y_t; report per-stage gaps.

    Within each coarse window the chain X makes s_batch fine steps; the
    window's noise sum (taken at the window-start state) is coupled to the
    Gaussian shock zeta of Y^X; the Brownian window total is then
    sqrt(eta_bar) zeta and intermediate Brownian points come from the
    pinned bridge, so all four processes share one source of randomness.
    Y_t has window-frozen drift/covariance and is therefore advanced
    exactly; Z^Y_t is advanced by Euler-Maruyama on the sub-grid.
    """
    spec = chain_spec
    eta = spec.eta
    eta_bar = s_batch * eta
    if s_batch < 1:
        raise PreconditionError(f"s_batch must be >= 1, got {s_batch}")
    if eta_bar > 1.0 + 1e-12:
        raise PreconditionError(f"batch window too wide: s_batch*eta = {eta_bar} > 1")
    bundle = compute_constants(spec.constants, eta, s_batch, spec.x0)
    if l_window < bundle.l_window * (1.0 - 1e-12):
        raise PreconditionError(
            f"window gain below threshold: l_window = {l_window} < {bundle.l_window}"
        )
    if l_window * eta_bar > 1.0 + 1e-12:
        raise PreconditionError(
            f"window gain times window width exceeds 1: {l_window} * {eta_bar} > 1"
        )
    l1_min = corrector_gain_threshold(spec.constants, eta)
    if l1 < l1_min * (1.0 - 1e-12):
        raise PreconditionError(f"corrector gain below threshold: l1 = {l1} < {l1_min}")
    k_steps = _steps_for_horizon(eta, horizon_t)
    if k_steps % s_batch != 0:
        raise PreconditionError(
            f"horizon of {k_steps} steps is not a whole number of windows of {s_batch}"
        )
    n_windows = k_steps // s_batch
    n_sub = int(refinement) * s_batch
    table = _ensure_table(spec.noise, s_batch, quantile_table, root)

    def run(chunk_idx: int, start: int, stop: int):
        return _run_cascade_chunk(
            spec, s_batch, l_window, l1, stop - start, n_windows, n_sub, table,
            root.child("chunk", chunk_idx),
        )

    parts = _exec.run_chunks(run, n_traj, threads)
    acc = dict(parts[0])
    for p in parts[1:]:
        for key in acc:
            acc[key] = acc[key] + p[key]

    n_valid = int(acc["n_alive"])
    if n_traj and (n_traj - n_valid) / n_traj > ABORT_DIVERGED_FRACTION:
        raise DivergenceError(
            f"{n_traj - n_valid}/{n_traj} cascade trajectories exceeded norm "
            f"{DIVERGENCE_NORM:g}"
        )

    def cell_stats(sum_arr, sumsq_arr, counts):
        counts = np.maximum(counts, 1.0)
        mean = sum_arr / counts
        var = np.maximum(sumsq_arr / counts - mean**2, 0.0)
        return mean, np.sqrt(var / counts)

    window_gap, window_se = cell_stats(
        acc["window_sum"], acc["window_sumsq"], acc["window_count"]
    )
    rows = np.arange(n_windows)
    counts_w = acc["sub_count"][:, None]
    interp_mean, interp_all_se = cell_stats(acc["interp_sum"], acc["interp_sumsq"], counts_w)
    sub_idx = np.argmax(interp_mean, axis=1)
    interp_gap = interp_mean[rows, sub_idx]
    interp_se = interp_all_se[rows, sub_idx]
    corr_mean, corr_all_se = cell_stats(acc["corr_sum"], acc["corr_sumsq"], counts_w)
    sub_idx_c = np.argmax(corr_mean, axis=1)
    corrector_gap = corr_mean[rows, sub_idx_c]
    corrector_se = corr_all_se[rows, sub_idx_c]

    src = spec.constants
    chi0 = spec.noise.chi0
    with np.errstate(over="ignore"):
        r_sq = float((1.0 + bundle.x0_norm_sq) * np.exp(bundle.c_growth * horizon_t))
        rate_terms = (
            eta ** (2.0 * src.alpha)
            + eta ** (src.gamma + src.beta) * (1 - chi0) / s_batch
            + eta_bar
        )
        window_bound = float(bundle.c_window * rate_terms * r_sq)
        interp_bound = float(bundle.c2 * eta_bar ** (1.0 + src.gamma) * r_sq)

    return CascadeReport(
        eta=eta,
        eta_bar=eta_bar,
        s_batch=s_batch,
        l_window=float(l_window),
        l1=float(l1),
        horizon_t=horizon_t,
        n_traj=n_traj,
        n_diverged=n_traj - int(n_valid),
        window_gap=window_gap,
        window_gap_se=window_se,
        interp_gap=interp_gap,
        interp_gap_se=interp_se,
        corrector_gap=corrector_gap,
        corrector_gap_se=corrector_se,
        window_bound=window_bound,
        interp_bound=interp_bound,
        r_sq_horizon=r_sq,
        bundle=bundle,
    )


def _run_cascade_chunk(spec, s_batch, l_window, l1, n, n_windows, n_sub, table, stream):
    g = stream.generator()
    d = spec.dim
    eta = spec.eta
    eta_bar = s_batch * eta
    dt = eta_bar / n_sub
    gamma_scale = np.sqrt(eta**spec.gamma)
    x = np.tile(spec.x0, (n, 1))
    y = x.copy()
    z = x.copy()
    alive = np.ones(n, dtype=bool)
    fallback = stream.child("independent-coupling")

    window_sum = np.zeros(n_windows + 1)
    window_sumsq = np.zeros(n_windows + 1)
    window_count = np.zeros(n_windows + 1)
    window_count[0] = n
    interp_sum = np.zeros((n_windows, n_sub))
    interp_sumsq = np.zeros((n_windows, n_sub))
    corr_sum = np.zeros((n_windows, n_sub))
    corr_sumsq = np.zeros((n_windows, n_sub))
    sub_count = np.zeros(n_windows)

    for k in range(n_windows):
        x_start = x.copy()
        y_start = y.copy()
        raw = np.zeros((n, d))
        for i in range(s_batch):
            raws = _raw_noise(spec.noise, g, (n, d))
            eps = _mix(spec.noise, x, raws)
            x = _advance(spec, x, k * s_batch + i, eps)
            raw += raws
        batch = _mix(spec.noise, x_start, raw)
        zeta = couple_gaussian(spec.noise, batch, s_batch, table, fallback.child(k))
        delta_w = np.sqrt(eta_bar) * zeta
        path = brownian_bridge_path(g, delta_w, n_sub, dt)

        drift_win = spec.drift(y_start) + l_window * (x_start - y_start)
        sig_y = lambda v: apply_coefficient(spec.cov_coeff, y_start, v)
        g_win = l_window * (x_start - y_start)

        interp_rows = np.empty((n, n_sub))
        corr_rows = np.empty((n, n_sub))
        y_t = y_start
        for j in range(1, n_sub + 1):
            y_next = y_start + (j * dt) * drift_win + gamma_scale * sig_y(path[:, j, :])
            dw = path[:, j, :] - path[:, j - 1, :]
            z = (
                z
                + dt * (spec.drift(z) + g_win + l1 * (y_t - z))
                + gamma_scale * apply_coefficient(spec.cov_coeff, z, dw)
            )
            y_t = y_next
            diff_i = y_start - y_t
            diff_c = y_t - z
            interp_rows[:, j - 1] = np.einsum("ij,ij->i", diff_i, diff_i)
            corr_rows[:, j - 1] = np.einsum("ij,ij->i", diff_c, diff_c)
        y = y_t  # exact window-end value: path end is pinned to delta_w

        bad = (
            ~np.isfinite(x).all(axis=1)
            | ~np.isfinite(y).all(axis=1)
            | ~np.isfinite(z).all(axis=1)
            | (np.einsum("ij,ij->i", x, x) > DIVERGENCE_NORM**2)
            | (np.einsum("ij,ij->i", y, y) > DIVERGENCE_NORM**2)
            | (np.einsum("ij,ij->i", z, z) > DIVERGENCE_NORM**2)
        )
        if bad.any():
            alive &= ~bad
            x[~alive] = 0.0
            y[~alive] = 0.0
            z[~alive] = 0.0

        diff = x - y
        gap = np.einsum("ij,ij->i", diff, diff)
        window_sum[k + 1] += gap[alive].sum()
        window_sumsq[k + 1] += (gap[alive] ** 2).sum()
        window_count[k + 1] += alive.sum()
        interp_sum[k] += interp_rows[alive].sum(axis=0)
        interp_sumsq[k] += (interp_rows[alive] ** 2).sum(axis=0)
        corr_sum[k] += corr_rows[alive].sum(axis=0)
        corr_sumsq[k] += (corr_rows[alive] ** 2).sum(axis=0)
        sub_count[k] += alive.sum()

    return {
        "window_sum": window_sum,
        "window_sumsq": window_sumsq,
        "window_count": window_count,
        "interp_sum": interp_sum,
        "interp_sumsq": interp_sumsq,
        "corr_sum": corr_sum,
        "corr_sumsq": corr_sumsq,
        "sub_count": sub_count,
        "n_alive": float(alive.sum()),
    }
