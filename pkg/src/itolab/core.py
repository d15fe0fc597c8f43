"""Domain types, constant arithmetic and rate-exponent formulas.

Everything here is explicit double-precision arithmetic on the constants
attached to an Ito chain

    X_{k+1} = X_k + eta (b(X_k) + delta_k)
              + eta^{(1+gamma)/2} (sigma(X_k) + Delta_k) eps_k(X_k)

and its approximating diffusion dZ = b(Z) dt + sqrt(eta^gamma) sigma(Z) dW.
The bundle of derived constants feeds every coupling-lemma verification and
the predicted Wasserstein-2 convergence exponents; nothing is tightened
beyond the explicit formulas, and nothing is symbolic.

For very stiff inputs (e.g. large Lipschitz constants) some exponential
constants overflow to ``inf``; downstream bound checks then pass trivially,
which is the honest reading of an astronomically loose bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ValidationError

# Encodes "the bias term vanishes": any exponent this large never wins the
# min() in the rate formula for step sizes of practical interest.
ALPHA_VANISHES = 64.0


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants attached to an Ito chain instance.

    m0           Lipschitz constant of drift and covariance coefficient.
    m1           scale of the drift bias and covariance shift.
    m_eps        constant in the batched-noise normal-approximation bound.
    sigma0       minimal eigenvalue of the covariance coefficient (> 0).
    sigma1       maximal eigenvalue of the covariance coefficient.
    alpha        bias decay exponent (> 0); ALPHA_VANISHES when the bias
                 terms vanish identically (bias_vanishes is then set).
    beta         noise normal-approximation decay exponent, in [0, 1].
    gamma        noise-scale exponent, 0 (sampling-type) or 1 (SGD-type).
    b_at_zero_norm  ||b(0)||.
    dim          state dimension d.
    """

    m0: float
    m1: float
    m_eps: float
    sigma0: float
    sigma1: float
    alpha: float
    beta: float
    gamma: int
    b_at_zero_norm: float = 0.0
    dim: int = 1
    bias_vanishes: bool = False

    def __post_init__(self) -> None:
        if not self.sigma0 > 0:
            raise ValidationError(
                f"uniform ellipticity requires sigma0 > 0, got sigma0={self.sigma0}"
            )
        if self.sigma1 < self.sigma0:
            raise ValidationError(
                f"uniform ellipticity requires sigma1 >= sigma0, got "
                f"sigma1={self.sigma1} < sigma0={self.sigma0}"
            )
        for name in ("m0", "m1", "m_eps", "b_at_zero_norm"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.alpha > 0:
            raise ValidationError(f"bias decay exponent alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValidationError(f"beta must lie in [0, 1], got {self.beta}")
        if self.gamma not in (0, 1):
            raise ValidationError(f"gamma must be 0 or 1, got {self.gamma}")
        if not (isinstance(self.dim, (int, np.integer)) and self.dim >= 1):
            raise ValidationError(f"dim must be a positive integer, got {self.dim}")


def _check_eta(eta: float) -> None:
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"step size must lie in (0, 1], got eta={eta}")


def compute_m_sq(c: AssumptionConstants, eta: float) -> float:
    """Squared growth constant M^2 controlling drift, bias and noise together.

    M^2 = 2 max{m0^2, ||b(0)||^2} + 2 max{m0^2, d sigma1^2} + 3 eta^{2 alpha} m1^2,
    which bounds ||b(x)||^2 + Tr(sigma sigma^T) + ||delta||^2 + eta^gamma Tr(Delta^2)
    by M^2 (1 + ||x||^2).
    """
    _check_eta(eta)
    bias_term = 0.0 if c.bias_vanishes else 3.0 * eta ** (2.0 * c.alpha) * c.m1**2
    return (
        2.0 * max(c.m0**2, c.b_at_zero_norm**2)
        + 2.0 * max(c.m0**2, c.dim * c.sigma1**2)
        + bias_term
    )


@dataclass(frozen=True)
class ConstantsBundle:
    """Every explicit derived constant, ready for bound evaluation.

    All fields are nonnegative; see compute_constants for the formulas.
    The source assumptions, step size, batch size and start point are kept
    so closed-form bound evaluators need no further context.
    """

    m_sq: float
    c_growth: float
    c_increment: float
    c_window: float
    l_window: float
    l_window_main: float
    l_window_alt: float
    l1_corrector: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c_w_scale: float
    # provenance
    source: AssumptionConstants
    eta: float
    s_batch: int
    x0_norm_sq: float

    def as_dict(self) -> dict[str, float]:
        keys = (
            "m_sq", "c_growth", "c_increment", "c_window",
            "l_window", "l_window_main", "l_window_alt", "l1_corrector",
            "c2", "c3", "c4", "c5", "c6", "c_w_scale",
        )
        return {k: float(getattr(self, k)) for k in keys}


def window_gain_thresholds(c: AssumptionConstants, m_sq: float) -> tuple[float, float]:
    """The two admissible lower bounds for the window-coupling gain L.

    Two sufficient conditions circulate for the coupled chain to contract:
    a mixed form 1 + M0 + M + 2 M0^2 + M^2 + M^2 m_eps^2 and a compact form
    1 + 10 M0^2.  Both are computed and exposed; simulations use their
    maximum so that every contraction estimate applies simultaneously.
    """
    m = math.sqrt(m_sq)
    main = 1.0 + c.m0 + m + 2.0 * c.m0**2 + m_sq + m_sq * c.m_eps**2
    alt = 1.0 + 10.0 * c.m0**2
    return main, alt


def corrector_gain_threshold(c: AssumptionConstants, eta: float) -> float:
    """Minimal gain L1 for the covariance-corrector coupling.

    Maximum of the two circulating variants 2 M0 + 4 M0 eta^gamma and
    2 M0 + 4 M0^2 eta^gamma.
    """
    scale = eta**c.gamma
    return 2.0 * c.m0 + 4.0 * max(c.m0, c.m0**2) * scale


def compute_constants(
    c: AssumptionConstants,
    eta: float,
    s_batch: int,
    x0: np.ndarray | float = 0.0,
) -> ConstantsBundle:
    """Evaluate the full bundle of explicit constants.

    With M^2 as in compute_m_sq and eta_bar = s_batch * eta <= 1:

        C    = 8 (1 + M^2)                         moment growth rate
        C'   = 12 M^2 e^{(C+1) S eta}              within-batch increment
        C''  = 2 (7 m1^2 e^C + 3 m0^2 C'
               + 48 m0^2 M^2 e^{C+1}
               + 4 d sigma1^2 m_eps^2)             window-coupling gap
        C2   = 4 (L^2 + M^2)(1 + 3 C'')(1 + ||x0||^2)   chain-to-path gap
        C3   = 2 (L^2 C'' + L1^2 C2) / sigma0^2    relative-entropy rate
        C4   = sqrt(2 d / m0) sigma1 sqrt(C3)
        C5   = C'' + 2 C2
        C6   = sqrt(sqrt(2) d / m0) sigma1 C3^{1/4}
        c_w  = eta^{gamma/2} sigma1 sqrt(2 d / m0)  entropy-to-W2 prefactor
               (horizon factor e^{m0 t} excluded; see transport.c_w_bound)

    L is the maximum of the two window_gain_thresholds and L1 the corrector
    threshold; both are part of the returned bundle.
    """
    _check_eta(eta)
    if s_batch < 1:
        raise PreconditionError(f"batch size must be a positive integer, got s_batch={s_batch}")
    if s_batch * eta > 1.0 + 1e-12:
        raise PreconditionError(f"batch window too wide: s_batch*eta = {s_batch * eta} > 1")

    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float))
    x0_norm_sq = float(x0_arr @ x0_arr)

    m_sq = compute_m_sq(c, eta)
    with np.errstate(over="ignore", divide="ignore"):
        c_growth = 8.0 * (1.0 + m_sq)
        c_increment = float(12.0 * m_sq * np.exp((c_growth + 1.0) * s_batch * eta))
        c_window = float(
            2.0
            * (
                7.0 * c.m1**2 * np.exp(c_growth)
                + 3.0 * c.m0**2 * c_increment
                + 48.0 * c.m0**2 * m_sq * np.exp(c_growth + 1.0)
                + 4.0 * c.dim * c.sigma1**2 * c.m_eps**2
            )
        )
        l_main, l_alt = window_gain_thresholds(c, m_sq)
        l_window = max(l_main, l_alt)
        l1 = corrector_gain_threshold(c, eta)
        c2 = float(4.0 * (l_window**2 + m_sq) * (1.0 + 3.0 * c_window) * (1.0 + x0_norm_sq))
        c3 = float(2.0 * (l_window**2 * c_window + l1**2 * c2) / c.sigma0**2)
        c5 = float(c_window + 2.0 * c2)
        if c.m0 > 0:
            c4 = float(np.sqrt(2.0 * c.dim / c.m0) * c.sigma1 * np.sqrt(c3))
            c6 = float(np.sqrt(np.sqrt(2.0) * c.dim / c.m0) * c.sigma1 * c3**0.25)
            c_w_scale = float(eta ** (c.gamma / 2.0) * c.sigma1 * np.sqrt(2.0 * c.dim / c.m0))
        else:
            # the entropy-to-W2 prefactor formula divides by m0; degenerate
            c4 = c6 = c_w_scale = np.inf

    return ConstantsBundle(
        m_sq=m_sq,
        c_growth=c_growth,
        c_increment=c_increment,
        c_window=c_window,
        l_window=l_window,
        l_window_main=l_main,
        l_window_alt=l_alt,
        l1_corrector=l1,
        c2=c2,
        c3=c3,
        c4=c4,
        c5=c5,
        c6=c6,
        c_w_scale=c_w_scale,
        source=c,
        eta=eta,
        s_batch=int(s_batch),
        x0_norm_sq=x0_norm_sq,
    )


@dataclass(frozen=True)
class RatePrediction:
    """Predicted Wasserstein-2 decay exponents for a chain/diffusion pair."""

    theta: float
    secondary_exponent: float
    overall_exponent: float
    chi0: int


def predict_rate(c: AssumptionConstants, chi0: int) -> RatePrediction:
    """Exponents of the predicted W2 decay O(eta^theta + eta^{theta/2 + gamma/4}).

    theta = min{alpha, ((gamma+1)(1+chi0) + (gamma+beta)(1-chi0)) / 4}; the
    min short-circuits to the second branch when the bias vanishes.  The
    overall exponent is min(theta, theta/2 + gamma/4).
    """
    if chi0 not in (0, 1):
        raise ValidationError(f"chi0 must be 0 or 1, got {chi0}")
    branch = ((c.gamma + 1.0) * (1 + chi0) + (c.gamma + c.beta) * (1 - chi0)) / 4.0
    theta = branch if c.bias_vanishes else min(c.alpha, branch)
    secondary = theta / 2.0 + c.gamma / 4.0
    return RatePrediction(
        theta=theta,
        secondary_exponent=secondary,
        overall_exponent=min(theta, secondary),
        chi0=chi0,
    )


@dataclass(frozen=True)
class HorizonBound:
    """Worst-case second-moment envelope over a fixed horizon.

    r_sq_of_t(t) = e^{C t} (1 + ||x0||^2) dominates 1 + E||X_k||^2 for all
    k with k*eta <= t; it is >= 1 and nondecreasing.
    """

    horizon_t: float
    r0_sq: float
    c_growth: float
    base: float  # 1 + ||x0||^2

    def r_sq_of_t(self, t: float) -> float:
        if t < 0:
            raise ValidationError(f"time must be >= 0, got t={t}")
        with np.errstate(over="ignore"):
            return float(self.base * np.exp(self.c_growth * t))


def horizon_bound(
    c: AssumptionConstants, x0: np.ndarray | float, horizon_t: float, eta: float = 1.0
) -> HorizonBound:
    x0_arr = np.atleast_1d(np.asarray(x0, dtype=float))
    x0_norm_sq = float(x0_arr @ x0_arr)
    m_sq = compute_m_sq(c, eta)
    return HorizonBound(
        horizon_t=horizon_t,
        r0_sq=max(1.0, x0_norm_sq),
        c_growth=8.0 * (1.0 + m_sq),
        base=1.0 + x0_norm_sq,
    )


def moment_envelope(
    c: AssumptionConstants, x0: np.ndarray | float, t: float, eta: float = 1.0
) -> float:
    """e^{C t} (1 + ||x0||^2) with C = 8 (1 + M^2).

    ``eta`` enters only through M^2; the default 1.0 is the worst case over
    admissible step sizes, callers tracking a specific chain pass its eta.
    """
    return horizon_bound(c, x0, t, eta).r_sq_of_t(t)
