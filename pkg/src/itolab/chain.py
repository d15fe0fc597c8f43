"""The Ito chain engine, its window-coupled companion and the model library.

The chain advances as

    X_{k+1} = X_k + eta (b(X_k) + delta_k)
              + eta^{(1+gamma)/2} (sigma(X_k) + Delta_k) eps_k(X_k)

with Lipschitz drift b, bounded bias delta, uniformly elliptic covariance
coefficient sigma, symmetric bounded covariance shift Delta and unit-
covariance noise eps.  The coupled companion chain Y advances on windows of
S fine steps with the coupled Gaussian zeta of the window's noise sum and an
extra contraction term -L eta_bar (Y - X), which substitutes for the
dissipativity the chain is never assumed to have.

Model presets wire standard methods (Langevin samplers, stochastic
gradient/approximation schemes, gradient-boosting surrogates) onto small
test problems with an analytic or checkable oracle each.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import _exec
from .core import ALPHA_VANISHES, AssumptionConstants, compute_constants
from .errors import (
    ConfigError,
    DivergenceError,
    PreconditionError,
    ValidationError,
)
from .noise import NoiseModel, QuantileTable, couple_gaussian, sample_noise, train_quantile_table
from .rng import RngStream

DIVERGENCE_NORM = 1.0e8
ABORT_DIVERGED_FRACTION = 0.01

# Coefficient fields (sigma, Delta) may be a scalar, a (d,) diagonal, a
# constant (d, d) matrix, or a callable mapping states (n, d) to (n, d, d).
Coefficient = float | np.ndarray | Callable[[np.ndarray], np.ndarray]
ShiftField = float | np.ndarray | Callable[[np.ndarray, int, float], np.ndarray] | None


def apply_coefficient(coeff, x: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Apply a coefficient field at states x (n, d) to vectors vec (n, d)."""
    if callable(coeff):
        return np.einsum("nij,nj->ni", coeff(x), vec)
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        return coeff * vec
    if coeff.ndim == 1:
        return coeff[None, :] * vec
    return vec @ coeff.T


def coefficient_matrices(coeff, x: np.ndarray) -> np.ndarray:
    """Materialize a coefficient field as (n, d, d) matrices at states x."""
    n, d = x.shape
    if callable(coeff):
        return np.asarray(coeff(x), dtype=float)
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        return np.broadcast_to(coeff * np.eye(d), (n, d, d))
    if coeff.ndim == 1:
        return np.broadcast_to(np.diag(coeff), (n, d, d))
    return np.broadcast_to(coeff, (n, d, d))


@dataclass
class ChainSpec:
    """Complete description of one Ito chain instance."""

    drift: Callable[[np.ndarray], np.ndarray]
    cov_coeff: Coefficient
    noise: NoiseModel
    eta: float
    gamma: int
    constants: AssumptionConstants
    x0: np.ndarray
    bias: Callable[[np.ndarray, int, float], np.ndarray] | None = None
    cov_shift: ShiftField = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if not 0.0 < self.eta <= 1.0:
            raise ValidationError(f"step size must lie in (0, 1], got eta={self.eta}")
        if self.gamma != self.constants.gamma:
            raise ValidationError(
                f"chain gamma={self.gamma} disagrees with constants gamma={self.constants.gamma}"
            )
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.constants.dim,):
            raise ValidationError(
                f"x0 has shape {x0.shape}, expected ({self.constants.dim},)"
            )
        self.x0 = x0

    @property
    def dim(self) -> int:
        return self.constants.dim

    @property
    def noise_scale(self) -> float:
        return self.eta ** ((1.0 + self.gamma) / 2.0)

    def bias_at(self, x: np.ndarray, k: int) -> np.ndarray | None:
        return None if self.bias is None else self.bias(x, k, self.eta)

    def shift_at(self, x: np.ndarray, k: int):
        if self.cov_shift is None:
            return None
        if callable(self.cov_shift):
            return self.cov_shift(x, k, self.eta)
        return self.cov_shift


def step(
    spec: ChainSpec,
    state: np.ndarray,
    k: int,
    stream: RngStream | None = None,
    noise_override: np.ndarray | None = None,
) -> np.ndarray:
    """One transition of the chain; accepts (d,) or (n, d) states.

    noise_override injects a fixed eps (test hook); otherwise one draw per
    row is taken from the stream.
    """
    x = np.asarray(state, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if noise_override is not None:
        eps = np.broadcast_to(np.asarray(noise_override, dtype=float), x.shape)
    else:
        if stream is None:
            raise PreconditionError("step needs a stream unless noise_override is given")
        eps = sample_noise(spec.noise, x, stream.child("step", k).generator())
    out = _advance(spec, x, k, eps)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite state after step {k}")
    return out[0] if single else out


def _advance(spec: ChainSpec, x: np.ndarray, k: int, eps: np.ndarray) -> np.ndarray:
    drift = spec.drift(x)
    bias = spec.bias_at(x, k)
    if bias is not None:
        drift = drift + bias
    shock = apply_coefficient(spec.cov_coeff, x, eps)
    shift = spec.shift_at(x, k)
    if shift is not None:
        shock = shock + apply_coefficient(shift, x, eps)
    return x + spec.eta * drift + spec.noise_scale * shock


@dataclass
class Ensemble:
    """Endpoints of independent trajectories on a step grid.

    Rows flagged in ``diverged`` hit the norm guard; their states are NaN
    from the first recorded step after the blow-up and they are dropped by
    states_at.
    """

    states: np.ndarray  # (n_traj, n_grid, d)
    grid: np.ndarray  # step indices
    eta: float
    root: RngStream
    diverged: np.ndarray  # (n_traj,) bool

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def n_diverged(self) -> int:
        return int(self.diverged.sum())

    def states_at(self, step_index: int) -> np.ndarray:
        """(m, d) states of the surviving trajectories at one grid step."""
        pos = np.flatnonzero(self.grid == step_index)
        if pos.size != 1:
            raise KeyError(f"step {step_index} not on the recorded grid {self.grid}")
        rows = self.states[~self.diverged, pos[0], :]
        return rows[np.all(np.isfinite(rows), axis=1)]


def _steps_for_horizon(eta: float, horizon_t: float) -> int:
    k = horizon_t / eta
    k_int = round(k)
    if k_int < 1 or abs(k - k_int) > 1e-9:
        raise PreconditionError(
            f"horizon_t={horizon_t} is not an integer number of steps at eta={eta}"
        )
    return int(k_int)


def simulate_ensemble(
    spec: ChainSpec,
    n_traj: int,
    horizon_t: float,
    record_grid=None,
    root: RngStream = RngStream(0),
    threads: int | None = None,
) -> Ensemble:
    """n_traj independent chain trajectories, recorded on a step grid.

    Deterministic given (spec, n_traj, root) regardless of worker count.
    Aborts with a diagnostic when more than 1% of trajectories diverge.
    """
    k_steps = _steps_for_horizon(spec.eta, horizon_t)
    if record_grid is None:
        record_grid = [k_steps]
    grid = np.unique(np.asarray(record_grid, dtype=int))
    if grid.size == 0 or grid[0] < 0 or grid[-1] > k_steps:
        raise PreconditionError(f"record grid {grid} not contained in [0, {k_steps}]")

    def run(chunk_idx: int, start: int, stop: int):
        return _run_chain_chunk(spec, stop - start, k_steps, grid, root.child("chunk", chunk_idx))

    parts = _exec.run_chunks(run, n_traj, threads)
    states = np.concatenate([p[0] for p in parts], axis=0)
    diverged = np.concatenate([p[1] for p in parts], axis=0)
    frac = diverged.mean() if n_traj else 0.0
    if frac > ABORT_DIVERGED_FRACTION:
        raise DivergenceError(
            f"{int(diverged.sum())}/{n_traj} trajectories exceeded norm "
            f"{DIVERGENCE_NORM:g} before step {k_steps}"
        )
    return Ensemble(states=states, grid=grid, eta=spec.eta, root=root, diverged=diverged)


def _run_chain_chunk(spec, n, k_steps, grid, stream):
    g = stream.generator()
    d = spec.dim
    x = np.tile(spec.x0, (n, 1))
    diverged = np.zeros(n, dtype=bool)
    states = np.full((n, grid.size, d), np.nan)
    grid_pos = {int(s): i for i, s in enumerate(grid)}
    if 0 in grid_pos:
        states[:, grid_pos[0], :] = x
    for k in range(k_steps):
        eps = sample_noise(spec.noise, x, g)
        x = _advance(spec, x, k, eps)
        bad = ~np.isfinite(x).all(axis=1) | (np.einsum("ij,ij->i", x, x) > DIVERGENCE_NORM**2)
        if bad.any():
            diverged |= bad
            x[diverged] = 0.0  # frozen; reported as NaN below
        if (k + 1) in grid_pos:
            pos = grid_pos[k + 1]
            states[:, pos, :] = x
            states[diverged, pos, :] = np.nan
    return states, diverged


@dataclass
class CoupledPair:
    """Paired samples of the chain and its window-coupled companion.

    x_states[k] holds X at fine step S*k, y_states[k] the companion at
    coarse step k; eta_bar = s_batch * eta is the coarse step size.
    """

    x_states: np.ndarray  # (n_traj, n_windows + 1, d)
    y_states: np.ndarray
    l_used: float
    s_batch: int
    eta_bar: float
    diverged: np.ndarray

    def gap_sq(self) -> np.ndarray:
        """Mean squared X-Y gap per coarse step over surviving pairs."""
        keep = ~self.diverged
        diff = self.x_states[keep] - self.y_states[keep]
        return np.einsum("nkd,nkd->nk", diff, diff).mean(axis=0)


def coupled_thresholds(spec: ChainSpec, s_batch: int):
    bundle = compute_constants(spec.constants, spec.eta, s_batch, spec.x0)
    return bundle.l_window, bundle


def simulate_coupled(
    spec: ChainSpec,
    s_batch: int,
    l_window: float,
    n_traj: int,
    horizon_t: float,
    root: RngStream = RngStream(0),
    quantile_table: QuantileTable | None = None,
    threads: int | None = None,
    enforce_thresholds: bool = True,
) -> CoupledPair:
    """Jointly evolve the chain X and its window-coupled companion Y.

    Per window of S fine steps: X advances S times; the raw noise draws of
    the window (evaluated at the window-start state for state-dependent
    models) are summed and coupled to a Gaussian zeta; Y makes one coarse
    step with drift b(Y), shock sqrt(eta_bar eta^gamma) sigma(Y) zeta and
    the contraction -L eta_bar (Y - X_window_start).

    enforce_thresholds=False skips the minimal-gain gate, for diagnostics
    of the uncontracted pairing (e.g. the L = 0 identity coincidence with
    Gaussian noise and S = 1); the width gates always apply.
    """
    if s_batch < 1:
        raise PreconditionError(f"s_batch must be >= 1, got {s_batch}")
    eta_bar = s_batch * spec.eta
    if eta_bar > 1.0 + 1e-12:
        raise PreconditionError(f"batch window too wide: s_batch*eta = {eta_bar} > 1")
    if enforce_thresholds:
        threshold, _ = coupled_thresholds(spec, s_batch)
        if l_window < threshold * (1.0 - 1e-12):
            raise PreconditionError(
                f"window gain below threshold: l_window = {l_window} < {threshold}"
            )
    if l_window * eta_bar > 1.0 + 1e-12:
        raise PreconditionError(
            f"window gain times window width exceeds 1: {l_window} * {eta_bar} > 1"
        )
    k_steps = _steps_for_horizon(spec.eta, horizon_t)
    if k_steps % s_batch != 0:
        raise PreconditionError(
            f"horizon of {k_steps} steps is not a whole number of windows of {s_batch}"
        )
    n_windows = k_steps // s_batch
    table = _ensure_table(spec.noise, s_batch, quantile_table, root)

    def run(chunk_idx: int, start: int, stop: int):
        return _run_coupled_chunk(
            spec, s_batch, l_window, stop - start, n_windows, table, root.child("chunk", chunk_idx)
        )

    parts = _exec.run_chunks(run, n_traj, threads)
    xs = np.concatenate([p[0] for p in parts], axis=0)
    ys = np.concatenate([p[1] for p in parts], axis=0)
    diverged = np.concatenate([p[2] for p in parts], axis=0)
    if diverged.mean() > ABORT_DIVERGED_FRACTION:
        raise DivergenceError(
            f"{int(diverged.sum())}/{n_traj} coupled trajectories exceeded norm "
            f"{DIVERGENCE_NORM:g}"
        )
    return CoupledPair(
        x_states=xs,
        y_states=ys,
        l_used=float(l_window),
        s_batch=int(s_batch),
        eta_bar=float(eta_bar),
        diverged=diverged,
    )


def _ensure_table(model: NoiseModel, s_batch: int, table, root: RngStream):
    if model.kind == "gaussian" or not model.independent_coordinates:
        return table
    if table is not None:
        return table
    return train_quantile_table(model, s_batch, 1 << 15, root.child("quantile-table"))


def _run_coupled_chunk(spec, s_batch, l_window, n, n_windows, table, stream):
    g = stream.generator()
    d = spec.dim
    eta_bar = s_batch * spec.eta
    x = np.tile(spec.x0, (n, 1))
    y = x.copy()
    diverged = np.zeros(n, dtype=bool)
    xs = np.empty((n, n_windows + 1, d))
    ys = np.empty((n, n_windows + 1, d))
    xs[:, 0, :] = x
    ys[:, 0, :] = y
    coarse_scale = np.sqrt(eta_bar * spec.eta**spec.gamma)
    fallback = stream.child("independent-coupling")
    for k in range(n_windows):
        x_start = x.copy()
        raw = np.zeros((n, d))
        for i in range(s_batch):
            fine_k = k * s_batch + i
            raws = _raw_noise(spec.noise, g, (n, d))
            eps = _mix(spec.noise, x, raws)
            x = _advance(spec, x, fine_k, eps)
            raw += raws
        batch = _mix(spec.noise, x_start, raw)
        zeta = couple_gaussian(spec.noise, batch, s_batch, table, fallback.child(k))
        y = (
            y
            + eta_bar * spec.drift(y)
            + coarse_scale * apply_coefficient(spec.cov_coeff, y, zeta)
            - l_window * eta_bar * (y - x_start)
        )
        bad = (
            ~np.isfinite(x).all(axis=1)
            | ~np.isfinite(y).all(axis=1)
            | (np.einsum("ij,ij->i", x, x) > DIVERGENCE_NORM**2)
            | (np.einsum("ij,ij->i", y, y) > DIVERGENCE_NORM**2)
        )
        if bad.any():
            diverged |= bad
            x[diverged] = 0.0
            y[diverged] = 0.0
        xs[:, k + 1, :] = x
        ys[:, k + 1, :] = y
        xs[diverged, k + 1, :] = np.nan
        ys[diverged, k + 1, :] = np.nan
    return xs, ys, diverged


def _raw_noise(model: NoiseModel, g, shape):
    from .noise import sample_raw

    return sample_raw(model.kind, g, shape)


def _mix(model: NoiseModel, states, raws):
    if model.state_mixing is None:
        return raws
    q = model.state_mixing(states)
    return np.einsum("nij,nj->ni", q, raws)


# --------------------------------------------------------------------------
# Assumption validator
# --------------------------------------------------------------------------


def validate_chain_spec(
    spec: ChainSpec,
    n_probe: int = 64,
    stream: RngStream | None = None,
    probe_radius: float = 3.0,
) -> None:
    """Monte Carlo check of the standing assumptions on a probe set.

    Raises ValidationError naming the violated clause.  Probes are drawn
    around the start point at the given radius, plus the origin.
    """
    stream = stream or RngStream(20240817).child("assumption-probe")
    g = stream.generator()
    d = spec.dim
    c = spec.constants
    rel = 1.0 + 1e-9
    probes = probe_radius * g.standard_normal((n_probe, d)) + spec.x0[None, :]
    probes = np.vstack([probes, np.zeros((1, d)), spec.x0[None, :]])

    bx = spec.drift(probes)
    diff_x = probes[:-1] - probes[1:]
    diff_b = bx[:-1] - bx[1:]
    lhs = np.linalg.norm(diff_b, axis=1)
    rhs = c.m0 * np.linalg.norm(diff_x, axis=1) * rel + 1e-12
    if np.any(lhs > rhs):
        i = int(np.argmax(lhs - rhs))
        raise ValidationError(
            f"drift Lipschitz bound violated: ||b(x)-b(x')|| = {lhs[i]:.6g} exceeds "
            f"m0 ||x-x'|| = {rhs[i]:.6g} on the probe set"
        )

    norm_sq = np.einsum("ij,ij->i", probes, probes)
    bias_cap = c.m1**2 * spec.eta ** (2.0 * c.alpha) * (1.0 + norm_sq) * rel + 1e-12
    for k in (0, 1, 7):
        delta = spec.bias_at(probes, k)
        if delta is None:
            continue
        dn = np.einsum("ij,ij->i", delta, delta)
        if np.any(dn > bias_cap):
            raise ValidationError(
                f"drift bias bound violated at step {k}: ||delta||^2 exceeds "
                f"m1^2 eta^(2 alpha) (1+||x||^2) on the probe set"
            )

    sig = coefficient_matrices(spec.cov_coeff, probes)
    if not np.allclose(sig, np.swapaxes(sig, 1, 2), atol=1e-9):
        raise ValidationError("covariance coefficient must be symmetric")
    eigs = np.linalg.eigvalsh(sig)
    if eigs.min() < c.sigma0 / rel - 1e-12 or eigs.max() > c.sigma1 * rel + 1e-12:
        raise ValidationError(
            f"uniform ellipticity violated: covariance eigenvalues in "
            f"[{eigs.min():.6g}, {eigs.max():.6g}] leave [sigma0, sigma1] = "
            f"[{c.sigma0:.6g}, {c.sigma1:.6g}]"
        )
    if callable(spec.cov_coeff):
        fro = np.linalg.norm(sig[:-1] - sig[1:], axis=(1, 2))
        rhs = c.m0 * np.linalg.norm(diff_x, axis=1) * rel + 1e-12
        if np.any(fro > rhs):
            raise ValidationError(
                "covariance coefficient Lipschitz bound violated on the probe set"
            )

    shift_cap = c.m1**2 * spec.eta ** (2.0 * c.alpha) * (1.0 + norm_sq) * rel + 1e-12
    for k in (0, 1, 7):
        shift = spec.shift_at(probes, k)
        if shift is None:
            continue
        mats = coefficient_matrices(shift, probes)
        if not np.allclose(mats, np.swapaxes(mats, 1, 2), atol=1e-9):
            raise ValidationError("covariance shift must be symmetric")
        tr = spec.eta**spec.gamma * np.einsum("nij,nij->n", mats, mats)
        if np.any(tr > shift_cap):
            raise ValidationError(
                f"covariance shift bound violated at step {k}: eta^gamma Tr(Delta^2) "
                f"exceeds m1^2 eta^(2 alpha) (1+||x||^2) on the probe set"
            )


# --------------------------------------------------------------------------
# Test problems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    """A test problem: a gradient field or a generic vector field.

    kind "potential" exposes grad = nabla f; kind "field" exposes the drift
    field directly (saddle descent-ascent, fixed-point residual).
    """

    name: str
    dim: int
    kind: str
    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    value_at_zero_norm: float
    meta: dict = field(default_factory=dict)


def quadratic_problem(dim: int = 1, curvature: float = 1.0) -> Problem:
    """f(x) = curvature * ||x||^2 / 2, the analytically solvable baseline."""
    a = float(curvature)

    def grad(x):
        return a * x

    return Problem("quadratic", dim, "potential", grad, abs(a), 0.0, {"curvature": a})


def double_well_problem(clamp_radius: float = 3.0) -> Problem:
    """1-D double well f(x) = (x^2 - 1)^2 with the gradient clamped smooth.

    The raw gradient 4x^3 - 4x is evaluated at clip(x, -R, R), which keeps
    it globally Lipschitz with constant 12 R^2 - 4 while leaving the
    landscape untouched on [-R, R]; non-convex and non-dissipative there.
    """
    r = float(clamp_radius)
    if r < 1.0:
        raise ConfigError(f"clamp radius must cover the wells (>= 1), got {r}")

    def grad(x):
        xc = np.clip(x, -r, r)
        return 4.0 * xc**3 - 4.0 * xc

    return Problem("double-well", 1, "potential", grad, 12.0 * r**2 - 4.0, 0.0, {"radius": r})


def bilinear_saddle_problem(half_dim: int = 1, coupling: float = 1.0) -> Problem:
    """f(x, y) = coupling * x^T y; the field rotates, dissipating nothing."""
    m = int(half_dim)
    b = float(coupling)

    def fld(z):
        x, y = z[:, :m], z[:, m:]
        return np.concatenate([-b * y, b * x], axis=1)

    return Problem("bilinear-saddle", 2 * m, "field", fld, abs(b), 0.0, {"coupling": b})


def affine_fixed_point_problem(
    dim: int = 1, contraction: float = 0.5, target: float = 1.0
) -> Problem:
    """F(x) = contraction * x + offset with F(target) = target; b = F - id."""
    a = float(contraction)
    if not 0.0 <= a < 1.0:
        raise ConfigError(f"contraction factor must lie in [0, 1), got {a}")
    offset = (1.0 - a) * target

    def fld(x):
        return (a - 1.0) * x + offset

    b0 = abs(offset) * np.sqrt(dim)
    return Problem(
        "affine-fixed-point", dim, "field", fld, abs(a - 1.0), b0,
        {"contraction": a, "target": target},
    )


PROBLEM_BUILDERS = {
    "quadratic": quadratic_problem,
    "double-well": double_well_problem,
    "bilinear-saddle": bilinear_saddle_problem,
    "affine-fixed-point": affine_fixed_point_problem,
}


# --------------------------------------------------------------------------
# Model presets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelPreset:
    """One row of the method-matching table.

    alpha/beta may be math.inf, meaning the corresponding error terms
    vanish.  published_* record externally published overall W2 exponents
    where available (per noise regime); the rate formula is evaluated
    independently and both are reported.
    """

    name: str
    gamma: int
    alpha: float
    beta: float
    needs: str  # problem kind required
    published_rate_gaussian: float | None = None
    published_rate_any: float | None = None


_INF = float("inf")

PRESETS: dict[str, ModelPreset] = {
    "gld": ModelPreset("gld", 0, _INF, _INF, "potential"),
    "sgld": ModelPreset("sgld", 0, 0.5, 1.0, "potential", 0.25, 0.25),
    "sgld-smoothing": ModelPreset("sgld-smoothing", 0, 0.5, 1.0, "potential"),
    "sgd": ModelPreset("sgd", 1, _INF, 0.0, "potential", 0.75, 0.5),
    "sgda": ModelPreset("sgda", 1, _INF, 0.0, "field"),
    "sa-fp": ModelPreset("sa-fp", 1, _INF, 0.0, "field"),
    "sa": ModelPreset("sa", 1, _INF, 0.0, "field"),
    "sgb": ModelPreset("sgb", 1, _INF, 0.0, "potential", None, 0.5),
    "sglb": ModelPreset("sglb", 0, 0.5, 0.0, "potential", None, 0.25),
    "sglb-o": ModelPreset("sglb-o", 0, 0.25, 0.0, "potential"),
}

_SMOOTHING_INNER_SAMPLES = 64
_SMOOTHING_INNER_SEED = 7151


def _psd_projection(dim: int, seed: int) -> np.ndarray:
    """Fixed random symmetric PSD matrix with eigenvalues in [0.1, 1]."""
    g = RngStream(seed).child("projection").generator()
    q, _ = np.linalg.qr(g.standard_normal((dim, dim)))
    eigs = g.uniform(0.1, 1.0, dim)
    return (q * eigs) @ q.T


def make_preset(
    name: str,
    problem: Problem | str = "quadratic",
    eta: float = 2.0**-6,
    noise: NoiseModel | None = None,
    x0: np.ndarray | float = 1.0,
    tau: float = 1.0,
    grad_cov_scale: float = 1.0,
    m_eps: float | None = None,
    projection_seed: int = 90111,
    problem_kwargs: dict | None = None,
) -> ChainSpec:
    """Assemble a ChainSpec for a named method on a test problem.

    tau is the inverse temperature of the Langevin-type rows;
    grad_cov_scale c models the stochastic-estimate covariance as c * I.
    The effective beta of the chain is the preset row's for Gaussian noise
    and the noise model's declared_beta otherwise (the row value is tied to
    a specific noise mechanism the synthetic families do not reproduce).
    """
    key = name.lower()
    if key not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known presets: {sorted(PRESETS)}")
    preset = PRESETS[key]
    if isinstance(problem, str):
        builder = PROBLEM_BUILDERS.get(problem)
        if builder is None:
            raise ConfigError(
                f"unknown problem {problem!r}; known problems: {sorted(PROBLEM_BUILDERS)}"
            )
        problem = builder(**(problem_kwargs or {}))
    if problem.kind != preset.needs:
        raise ConfigError(
            f"preset {key!r} needs a {preset.needs!r} problem, got {problem.kind!r}"
        )
    noise = noise or NoiseModel("gaussian")
    d = problem.dim
    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0_arr.size == 1 and d > 1:
        x0_arr = np.full(d, float(x0_arr[0]))

    c_cov = float(grad_cov_scale)
    sqrt_tau_scale = np.sqrt(2.0 / tau)
    g_fn = problem.func

    bias = None
    cov_shift = None
    m1 = 0.0

    if key in ("gld", "sgld", "sgld-smoothing"):
        drift = lambda x: -g_fn(x)
        sigma = sqrt_tau_scale
        m0 = problem.lipschitz
        b0 = problem.value_at_zero_norm
    elif key == "sgd":
        drift = lambda x: -g_fn(x)
        sigma = np.sqrt(c_cov)
        m0 = problem.lipschitz
        b0 = problem.value_at_zero_norm
    elif key in ("sgda", "sa-fp", "sa"):
        drift = g_fn
        sigma = np.sqrt(c_cov)
        m0 = problem.lipschitz
        b0 = problem.value_at_zero_norm
    elif key in ("sgb", "sglb", "sglb-o"):
        proj = _psd_projection(d, projection_seed)
        drift = lambda x: -(g_fn(x) @ proj.T)
        lam_max = float(np.linalg.eigvalsh(proj).max())
        m0 = problem.lipschitz * lam_max
        b0 = problem.value_at_zero_norm * lam_max
        sigma = np.sqrt(c_cov) if key == "sgb" else sqrt_tau_scale
    else:  # pragma: no cover
        raise ConfigError(f"unhandled preset {key!r}")

    if key in ("sgld", "sgld-smoothing"):
        base = 2.0 / tau
        shift_coef = np.sqrt(base + eta * c_cov) - np.sqrt(base)
        cov_shift = shift_coef * np.eye(d)
        m1 = c_cov * np.sqrt(d * tau / 8.0)
    if key in ("sglb", "sglb-o"):
        cov_shift = np.sqrt(eta * c_cov) * np.eye(d)
        m1 = np.sqrt(d * c_cov)
    if key == "sgld-smoothing":
        inner = RngStream(_SMOOTHING_INNER_SEED).child("smoothing").generator()
        half = inner.standard_normal((_SMOOTHING_INNER_SAMPLES // 2, d))
        z_inner = np.concatenate([half, -half])  # antithetic: exact on linear gradients

        def bias(x, k, eta_k, _z=z_inner, _g=g_fn):
            smoothed = np.zeros_like(x)
            root_eta = np.sqrt(eta_k)
            for z_row in _z:
                smoothed += _g(x + root_eta * z_row[None, :])
            return _g(x) - smoothed / _z.shape[0]

        m1 = max(m1, m0 * np.sqrt(d))

    chi0 = noise.chi0
    alpha = ALPHA_VANISHES if np.isinf(preset.alpha) else float(preset.alpha)
    row_beta = 1.0 if np.isinf(preset.beta) else float(preset.beta)
    beta = row_beta if chi0 == 1 else noise.declared_beta
    if m_eps is None:
        m_eps = 0.0 if chi0 == 1 else 1.0

    sigma_val = float(sigma)
    constants = AssumptionConstants(
        m0=float(m0),
        m1=float(m1),
        m_eps=float(m_eps),
        sigma0=sigma_val,
        sigma1=sigma_val,
        alpha=alpha,
        beta=beta,
        gamma=preset.gamma,
        b_at_zero_norm=float(b0),
        dim=d,
        bias_vanishes=np.isinf(preset.alpha),
    )
    return ChainSpec(
        drift=drift,
        cov_coeff=sigma_val,
        noise=noise,
        eta=eta,
        gamma=preset.gamma,
        constants=constants,
        x0=x0_arr,
        bias=bias,
        cov_shift=cov_shift,
        name=key,
    )


def corollary_batch_size(eta: float, beta: float, chi0: int) -> int:
    """Batch size ceil(eta^{-(1-beta)/2}) for non-Gaussian noise, else 1."""
    if chi0 == 1:
        return 1
    return int(np.ceil(eta ** (-(1.0 - beta) / 2.0) - 1e-12))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def save_ensemble(ensemble: Ensemble, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
    """Write the raw states (flat binary) and a long-format CSV companion.

    The CSV carries one row per (traj, step, coord) so any tool can consume
    it; floats are rendered with repr (shortest round-trip), which keeps
    reruns byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    npy_path = out / f"{stem}.npy"
    csv_path = out / f"{stem}.csv"
    np.save(npy_path, ensemble.states)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traj", "step", "coord", "value"])
        n, n_grid, d = ensemble.states.shape
        for i in range(n):
            for j, step_idx in enumerate(ensemble.grid):
                for c_idx in range(d):
                    writer.writerow([i, int(step_idx), c_idx, repr(ensemble.states[i, j, c_idx])])
    return npy_path, csv_path
