"""itolab: simulate Ito chains, their diffusion limits, and verify the gap.

Modules
-------
core       assumption constants, derived constant bundle, rate exponents
noise      noise families, batch sums, quantile couplings, split streams
chain      the chain engine, window-coupled companion, model presets
sde        reference diffusions, the analytic linear oracle, the cascade
transport  empirical and closed-form Wasserstein-2 estimators
harness    step-size sweeps, slope fits, coupling-lemma verification
cli        configuration-driven command line front end
"""

from .core import (
    ALPHA_VANISHES,
    AssumptionConstants,
    ConstantsBundle,
    HorizonBound,
    RatePrediction,
    compute_constants,
    compute_m_sq,
    moment_envelope,
    predict_rate,
)
from .rng import RngStream

__all__ = [
    "ALPHA_VANISHES",
    "AssumptionConstants",
    "ConstantsBundle",
    "HorizonBound",
    "RatePrediction",
    "RngStream",
    "compute_constants",
    "compute_m_sq",
    "moment_envelope",
    "predict_rate",
]

__version__ = "0.1.0"
