"""Step-size sweeps, convergence-slope fits and coupling-lemma verification.

A sweep simulates the chain and its reference diffusion independently at
each step size, estimates the Wasserstein-2 gap at the horizon, and fits a
log-log slope to compare against the predicted exponents.  The theory gives
upper bounds, so the accompanying acceptance check is one-sided: a fitted
slope is allowed to beat the prediction, never to undershoot it by more
than the tolerance.

Lemma verification runs Monte Carlo estimates of the moment envelope, the
within-batch increment bound, the window-coupling gap, the interpolation
and corrector gaps and the batched-noise normal-approximation gap, each
against its explicit constant.  The bounds are theorems: a negative margin
beyond Monte Carlo slack indicates an implementation bug, not a tuning
problem.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import (
    corollary_batch_size,
    coupled_thresholds,
    make_preset,
    simulate_coupled,
    simulate_ensemble,
)
from .core import (
    RatePrediction,
    compute_constants,
    corrector_gain_threshold,
    moment_envelope,
    predict_rate,
)
from .errors import ConfigError, DataError
from .noise import NoiseModel, estimate_clt_gap
from .rng import RngStream
from .sde import DiffusionSpec, simulate_interpolation_cascade, simulate_reference
from .transport import (
    MAX_ASSIGNMENT,
    EmpiricalMeasure,
    sampling_floor,
    w2_exact_1d,
    w2_exact_assignment,
    w2_sliced,
)

SLOPE_TOLERANCE = 0.15
CLT_LEMMA_GRID = (1, 4, 16)


@dataclass
class SweepPlan:
    """Everything needed to reproduce one step-size sweep."""

    preset: str
    eta_grid: tuple[float, ...] = tuple(2.0**-k for k in range(3, 10))
    problem: str = "quadratic"
    horizon_t: float = 1.0
    n_traj: int = 20_000
    n_repeats: int = 5
    refinement: int = 64
    seed: int = 0
    noise: NoiseModel = field(default_factory=lambda: NoiseModel("gaussian"))
    x0: float | np.ndarray = 1.0
    tau: float = 1.0
    grad_cov_scale: float = 1.0
    m_eps: float | None = None
    s_policy: str | int = "corollary-1"
    estimator: str = "auto"
    n_projections: int = 128
    threads: int | None = None
    problem_kwargs: dict = field(default_factory=dict)
    synthetic: tuple[float, float] | None = None  # (amplitude, exponent)

    def __post_init__(self) -> None:
        etas = tuple(float(e) for e in self.eta_grid)
        if any(a <= b for a, b in zip(etas, etas[1:])):
            raise ConfigError(f"eta grid must be strictly decreasing, got {etas}")
        if any(not 0.0 < e <= 1.0 for e in etas):
            raise ConfigError(f"eta grid must lie in (0, 1], got {etas}")
        self.eta_grid = etas
        if self.estimator not in ("auto", "exact-1d", "exact-assignment", "sliced"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")

    def batch_size_at(self, eta: float, beta: float) -> int:
        if self.s_policy == "corollary-1":
            return corollary_batch_size(eta, beta, self.noise.chi0)
        s = int(self.s_policy)
        if s < 1:
            raise ConfigError(f"explicit batch size must be >= 1, got {s}")
        return s


@dataclass
class SweepPoint:
    eta: float
    s_batch: int
    w2_mean: float
    stderr: float
    floor: float
    repeats: list[float]
    repeat_stderrs: list[float]
    excluded: bool = False
    warning: str = ""


@dataclass
class RateFit:
    fitted_slope: float
    intercept: float
    r_squared: float
    points: list[SweepPoint]
    predicted: RatePrediction
    published_rate: float | None
    plan: SweepPlan

    @property
    def used_points(self) -> list[SweepPoint]:
        return [p for p in self.points if not p.excluded]

    def passes_one_sided(self, tolerance: float = SLOPE_TOLERANCE) -> bool:
        return self.fitted_slope >= self.predicted.overall_exponent - tolerance

    def tail_monotone(self, n_tail: int = 4, n_sigma: float = 3.0) -> bool:
        """Measured gap decreasing on the last n_tail grid points, with slack."""
        pts = self.points[-n_tail:]
        for a, b in zip(pts, pts[1:]):
            slack = n_sigma * math.hypot(a.stderr, b.stderr)
            if b.w2_mean > a.w2_mean + slack:
                return False
        return True


def fit_slope(points) -> tuple[float, float, float]:
    """Weighted least squares of log(value) on log(eta).

    points: iterable of (eta, value) or (eta, value, stderr); weights are
    1/stderr_log^2 where stderr_log = stderr/value, unweighted when any
    stderr is missing or zero.  Returns (slope, intercept, r_squared).
    """
    pts = [tuple(p) for p in points]
    if len(pts) < 2:
        raise DataError(f"slope fit needs at least 2 points, got {len(pts)}")
    etas = np.array([p[0] for p in pts], dtype=float)
    vals = np.array([p[1] for p in pts], dtype=float)
    if np.any(vals <= 0) or np.any(etas <= 0):
        raise DataError("slope fit needs strictly positive step sizes and values")
    ses = np.array([p[2] if len(p) > 2 else 0.0 for p in pts], dtype=float)
    x = np.log(etas)
    y = np.log(vals)
    if np.any(ses <= 0) or np.any(~np.isfinite(ses)):
        w = np.ones_like(y)
    else:
        w = (vals / ses) ** 2
    wsum = w.sum()
    xbar = (w * x).sum() / wsum
    ybar = (w * y).sum() / wsum
    sxx = (w * (x - xbar) ** 2).sum()
    if sxx == 0:
        raise DataError("slope fit needs at least two distinct step sizes")
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    resid = y - (intercept + slope * x)
    ss_res = (w * resid**2).sum()
    ss_tot = (w * (y - ybar) ** 2).sum()
    r_sq = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r_sq)


def _measure_w2(
    chain_pts: np.ndarray,
    ref_pts: np.ndarray,
    estimator: str,
    stream: RngStream,
    n_projections: int,
):
    a = EmpiricalMeasure(chain_pts)
    b = EmpiricalMeasure(ref_pts)
    if estimator == "auto":
        if a.dim == 1:
            estimator = "exact-1d"
        elif min(a.n, b.n) <= MAX_ASSIGNMENT and a.n == b.n:
            estimator = "exact-assignment"
        else:
            estimator = "sliced"
    if estimator == "exact-1d":
        return w2_exact_1d(a, b, stream=stream, n_boot=32)
    if estimator == "exact-assignment":
        return w2_exact_assignment(a, b)
    return w2_sliced(a, b, n_projections, stream)


def run_sweep(plan: SweepPlan) -> RateFit:
    """Simulate the sweep, estimate gaps, fit the log-log slope.

    Points whose measured gap sits below 3x the larger of the sampling
    floor and the repeat scatter are excluded from the fit (with a recorded
    warning): below that line the estimator reads its own noise.  Chain and
    reference ensembles are independent; the gap is a distance of laws, not
    of coupled paths.
    """
    root = RngStream(plan.seed)
    preset_row = None
    points: list[SweepPoint] = []
    prediction = None
    published = None
    for i, eta in enumerate(plan.eta_grid):
        if plan.synthetic is not None:
            amp, expo = plan.synthetic
            w2 = amp * eta**expo
            points.append(
                SweepPoint(eta, 1, w2, 0.0, 0.0, [w2], [0.0])
            )
            continue
        spec = make_preset(
            plan.preset,
            plan.problem,
            eta=eta,
            noise=plan.noise,
            x0=plan.x0,
            tau=plan.tau,
            grad_cov_scale=plan.grad_cov_scale,
            m_eps=plan.m_eps,
            problem_kwargs=plan.problem_kwargs,
        )
        if prediction is None:
            prediction = predict_rate(spec.constants, spec.noise.chi0)
            from .chain import PRESETS

            preset_row = PRESETS[spec.name]
            published = (
                preset_row.published_rate_gaussian
                if spec.noise.chi0 == 1
                else preset_row.published_rate_any
            )
        k_steps = int(round(plan.horizon_t / eta))
        s_batch = plan.batch_size_at(eta, spec.constants.beta)
        diff = DiffusionSpec.from_chain(spec)
        reps: list[float] = []
        rep_ses: list[float] = []
        floors: list[float] = []
        for r in range(plan.n_repeats):
            chain_root = root.child("sweep", i, r, "chain")
            ref_root = root.child("sweep", i, r, "reference")
            ens = simulate_ensemble(
                spec, plan.n_traj, plan.horizon_t, [k_steps], chain_root,
                threads=plan.threads,
            )
            ref = simulate_reference(
                diff, plan.n_traj, plan.horizon_t, plan.refinement, [k_steps],
                ref_root, threads=plan.threads,
            )
            est = _measure_w2(
                ens.states_at(k_steps),
                ref.states_at(k_steps),
                plan.estimator,
                root.child("sweep", i, r, "bootstrap"),
                plan.n_projections,
            )
            reps.append(est.value)
            rep_ses.append(est.stderr if math.isfinite(est.stderr) else 0.0)
            floors.append(sampling_floor(ens.states_at(k_steps)))
        w2_mean = float(np.mean(reps))
        stderr = float(np.std(reps, ddof=1) / math.sqrt(len(reps))) if len(reps) > 1 else 0.0
        floor = float(np.mean(floors))
        points.append(SweepPoint(eta, s_batch, w2_mean, stderr, floor, reps, rep_ses))

    if plan.synthetic is not None:
        prediction = RatePrediction(plan.synthetic[1], plan.synthetic[1], plan.synthetic[1], 1)

    for p in points:
        if plan.synthetic is None and p.w2_mean < 3.0 * max(p.floor, p.stderr):
            p.excluded = True
            p.warning = "gap below estimator resolution (3x sampling floor); excluded from fit"
    kept = [p for p in points if not p.excluded]
    if len(kept) < 4 and plan.synthetic is None:
        raise DataError(
            f"only {len(kept)} grid points resolve above the sampling floor; "
            "need at least 4 for a slope fit"
        )
    slope, intercept, r_sq = fit_slope(
        [(p.eta, p.w2_mean, p.stderr if p.stderr > 0 else None) for p in kept]
        if all(p.stderr > 0 for p in kept)
        else [(p.eta, p.w2_mean) for p in kept]
    )
    return RateFit(
        fitted_slope=slope,
        intercept=intercept,
        r_squared=r_sq,
        points=points,
        predicted=prediction,
        published_rate=published,
        plan=plan,
    )


# --------------------------------------------------------------------------
# Lemma verification
# --------------------------------------------------------------------------


@dataclass
class LemmaReport:
    lemma: str
    measured: float
    bound: float
    stderr: float

    @property
    def margin(self) -> float:
        return self.bound - self.measured

    @property
    def passed(self) -> bool:
        return self.margin >= -3.0 * self.stderr


def _moment_report(spec, n_traj, horizon_t, root, threads) -> LemmaReport:
    k_steps = int(round(horizon_t / spec.eta))
    stride = max(1, k_steps // 16)
    grid = sorted(set(range(0, k_steps + 1, stride)) | {k_steps})
    ens = simulate_ensemble(spec, n_traj, horizon_t, grid, root, threads=threads)
    worst, worst_se = -math.inf, 0.0
    base = 1.0 + float(spec.x0 @ spec.x0)
    for k in grid:
        if k == 0:
            continue  # equality holds identically at the start
        x = ens.states_at(k)
        sq = np.einsum("ij,ij->i", x, x)
        scale = moment_envelope(spec.constants, spec.x0, k * spec.eta, spec.eta) / base
        ratio = (1.0 + sq.mean()) / scale
        se = sq.std(ddof=1) / math.sqrt(sq.size) / scale
        if ratio > worst:
            worst, worst_se = ratio, se
    return LemmaReport("moment", worst, base, worst_se)


def _increment_report(spec, s_batch, n_traj, horizon_t, root, threads) -> LemmaReport:
    k_steps = int(round(horizon_t / spec.eta))
    s_probe = max(s_batch, min(8, k_steps))
    anchors = sorted({0, (k_steps // 2 // s_probe) * s_probe, k_steps - s_probe})
    grid = sorted({a + i for a in anchors for i in range(s_probe + 1) if a + i <= k_steps})
    ens = simulate_ensemble(spec, n_traj, horizon_t, grid, root, threads=threads)
    bundle_probe = compute_constants(spec.constants, spec.eta, s_probe, spec.x0)
    worst, worst_se = -math.inf, 0.0
    keep = ~ens.diverged
    states = {k: ens.states[keep, j, :] for j, k in enumerate(ens.grid)}
    for a in anchors:
        base = states[a]
        denom0 = 1.0 + np.einsum("ij,ij->i", base, base).mean()
        for i in range(1, s_probe + 1):
            if a + i > k_steps or (a + i) not in states:
                continue
            diff = states[a + i] - base
            gap = np.einsum("ij,ij->i", diff, diff)
            scale = i * spec.eta * denom0
            ratio = gap.mean() / scale
            se = gap.std(ddof=1) / math.sqrt(gap.size) / scale
            if ratio > worst:
                worst, worst_se = ratio, se
    return LemmaReport("increment", worst, bundle_probe.c_increment, worst_se)


def _window_report(spec, s_batch, l_window, bundle, n_traj, horizon_t, root, threads):
    pair = simulate_coupled(
        spec, s_batch, l_window, n_traj, horizon_t, root, threads=threads
    )
    keep = ~pair.diverged
    diff = pair.x_states[keep] - pair.y_states[keep]
    gaps = np.einsum("nkd,nkd->nk", diff, diff)
    r_sq = moment_envelope(spec.constants, spec.x0, horizon_t, spec.eta)
    per_k = gaps.mean(axis=0) / r_sq
    k_star = int(np.argmax(per_k))
    se = gaps[:, k_star].std(ddof=1) / math.sqrt(gaps.shape[0]) / r_sq
    src = spec.constants
    chi0 = spec.noise.chi0
    rate = (
        spec.eta ** (2.0 * src.alpha)
        + spec.eta ** (src.gamma + src.beta) * (1 - chi0) / s_batch
        + pair.eta_bar
    )
    return LemmaReport("window", float(per_k[k_star]), float(bundle.c_window * rate), se)


def _clt_report(noise: NoiseModel, eta, n, root) -> LemmaReport:
    """The batched-noise gap must improve (not degrade) along the S grid.

    Gaps are compared per unit of batch variance (gap / S): the raw gap is
    measured against N(0, S I) whose scale grows with S, so the estimator
    floor alone would grow ~S and mask the improvement.
    """
    n_quarter = max(1000, n // 4)
    gaps, ses = [], []
    for s in CLT_LEMMA_GRID:
        sub = [
            estimate_clt_gap(noise, s, n_quarter, root.child("clt", s, q)) / s
            for q in range(4)
        ]
        gaps.append(float(np.mean(sub)))
        ses.append(float(np.std(sub, ddof=1) / 2.0))
    measured = gaps[-1]
    bound = gaps[0]
    stderr = math.hypot(ses[0], ses[-1])
    return LemmaReport("clt-gap", measured, bound, stderr)


def verify_lemmas(
    preset: str,
    eta: float,
    s_batch: int | None = None,
    n_traj: int = 4000,
    seed: int = 0,
    horizon_t: float = 1.0,
    problem: str = "quadratic",
    noise: NoiseModel | None = None,
    l_window: float | None = None,
    l1: float | None = None,
    cascade_refinement: int = 16,
    threads: int | None = None,
    x0: float | np.ndarray = 1.0,
    tau: float = 1.0,
    grad_cov_scale: float = 1.0,
    m_eps: float | None = None,
    problem_kwargs: dict | None = None,
) -> list[LemmaReport]:
    """Run the six Monte Carlo lemma checks for one configuration.

    Gate violations (window width, gains below threshold) raise before any
    simulation happens.  Explicit l_window/l1 override the automatic
    thresholds but are still gated.
    """
    noise = noise or NoiseModel("gaussian")
    spec = make_preset(
        preset, problem, eta=eta, noise=noise, x0=x0, tau=tau,
        grad_cov_scale=grad_cov_scale, m_eps=m_eps,
        problem_kwargs=problem_kwargs or {},
    )
    if s_batch is None:
        s_batch = corollary_batch_size(eta, spec.constants.beta, noise.chi0)
    if s_batch * eta > 1.0 + 1e-12:
        raise ConfigError(f"batch window too wide: s_batch*eta = {s_batch * eta} > 1")
    threshold, bundle = coupled_thresholds(spec, s_batch)
    l_window = threshold if l_window is None else float(l_window)
    if l_window < threshold * (1.0 - 1e-12):
        raise ConfigError(
            f"window gain below threshold: l_window = {l_window} < {threshold}"
        )
    if l_window * s_batch * eta > 1.0 + 1e-12:
        raise ConfigError(
            f"window gain times window width exceeds 1: "
            f"{l_window} * {s_batch * eta} > 1"
        )
    l1_min = corrector_gain_threshold(spec.constants, eta)
    l1 = l1_min if l1 is None else float(l1)
    if l1 < l1_min * (1.0 - 1e-12):
        raise ConfigError(f"corrector gain below threshold: l1 = {l1} < {l1_min}")
    k_steps = int(round(horizon_t / eta))
    if abs(horizon_t / eta - k_steps) > 1e-9 or k_steps % s_batch:
        raise ConfigError(
            f"horizon {horizon_t} is not a whole number of windows at eta={eta}, S={s_batch}"
        )

    root = RngStream(seed)
    reports = [
        _moment_report(spec, n_traj, horizon_t, root.child("moment"), threads),
        _increment_report(spec, s_batch, n_traj, horizon_t, root.child("increment"), threads),
        _window_report(spec, s_batch, l_window, bundle, n_traj, horizon_t,
                       root.child("window"), threads),
    ]
    cascade = simulate_interpolation_cascade(
        spec, s_batch, l_window, l1, n_traj, horizon_t, root.child("cascade"),
        refinement=cascade_refinement, threads=threads,
    )
    reports.append(
        LemmaReport("interpolation", cascade.interp_sup, cascade.interp_bound,
                    float(cascade.interp_gap_se.max()))
    )
    corr_se = math.hypot(float(cascade.corrector_gap_se.max()),
                         float(cascade.interp_gap_se.max()))
    reports.append(
        LemmaReport("corrector", cascade.corrector_sup, cascade.interp_sup, corr_se)
    )
    reports.append(
        _clt_report(noise, eta, min(5 * n_traj, 20_000), root.child("clt-gap"))
    )
    return reports


# --------------------------------------------------------------------------
# CSV / SVG reports
# --------------------------------------------------------------------------


def write_sweep_csv(path: str | Path, fit: RateFit) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["preset", "eta", "S", "n_traj", "repeat", "w2", "stderr", "method",
             "seed", "warning"]
        )
        plan = fit.plan
        method = plan.estimator if plan.synthetic is None else "synthetic"
        for p in fit.points:
            for r, (val, se) in enumerate(zip(p.repeats, p.repeat_stderrs)):
                w.writerow(
                    [plan.preset, repr(p.eta), p.s_batch, plan.n_traj, r, repr(val),
                     repr(se), method, plan.seed, p.warning]
                )
    return path


def write_fit_csv(path: str | Path, fit: RateFit) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["slope", "intercept", "r_squared", "predicted_theta",
             "predicted_overall", "published_overall"]
        )
        w.writerow(
            [repr(fit.fitted_slope), repr(fit.intercept), repr(fit.r_squared),
             repr(fit.predicted.theta), repr(fit.predicted.overall_exponent),
             "" if fit.published_rate is None else repr(fit.published_rate)]
        )
    return path


def write_lemmas_csv(path: str | Path, reports: list[LemmaReport]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lemma", "measured", "bound", "margin", "stderr", "pass"])
        for r in reports:
            w.writerow(
                [r.lemma, repr(r.measured), repr(r.bound), repr(r.margin),
                 repr(r.stderr), str(r.passed).lower()]
            )
    return path


def write_cascade_csv(path: str | Path, report) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "t", "gap", "bound", "margin"])
        for stage, t, gap, bound, margin in report.rows():
            w.writerow([stage, repr(t), repr(gap), repr(bound), repr(margin)])
    return path


def render_sweep_svg(sweep_csv: str | Path, fit_csv: str | Path, svg_path: str | Path) -> Path:
    """Log-log plot of the sweep, regenerated purely from the CSV artifacts."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_eta: dict[float, list[float]] = {}
    preset = ""
    with open(sweep_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            by_eta.setdefault(float(row["eta"]), []).append(float(row["w2"]))
            preset = row["preset"]
    with open(fit_csv, newline="") as fh:
        fitrow = next(csv.DictReader(fh))
    etas = np.array(sorted(by_eta))
    means = np.array([np.mean(by_eta[e]) for e in etas])
    spreads = np.array(
        [np.std(by_eta[e], ddof=1) if len(by_eta[e]) > 1 else 0.0 for e in etas]
    )
    slope = float(fitrow["slope"])
    intercept = float(fitrow["intercept"])
    predicted = float(fitrow["predicted_overall"])

    plt.rcParams["svg.hashsalt"] = "itolab"
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.errorbar(etas, means, yerr=spreads, fmt="o", capsize=3, label="measured W2")
    line = np.exp(intercept) * etas**slope
    ax.plot(etas, line, "-", label=f"fit slope {slope:.3f}")
    anchor = means[-1] / etas[-1] ** predicted
    ax.plot(etas, anchor * etas**predicted, "--", label=f"predicted slope {predicted:.3g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("step size")
    ax.set_ylabel("W2 at horizon")
    ax.set_title(f"{preset}: gap vs step size")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(svg_path)
