"""Constant arithmetic and rate-exponent tests.

Hand-evaluated expectations are derived by direct evaluation of the
closed-form definitions; nothing here simulates.
"""

import dataclasses
import math

import numpy as np
import pytest

from itolab.core import (
    ALPHA_VANISHES,
    AssumptionConstants,
    compute_constants,
    compute_m_sq,
    corrector_gain_threshold,
    horizon_bound,
    moment_envelope,
    predict_rate,
    window_gain_thresholds,
)
from itolab.errors import PreconditionError, ValidationError


def consts(**kw):
    base = dict(
        m0=1.0, m1=0.0, m_eps=0.0, sigma0=1.0, sigma1=1.0,
        alpha=0.5, beta=1.0, gamma=0, b_at_zero_norm=0.0, dim=1,
    )
    base.update(kw)
    return AssumptionConstants(**base)


class TestMSquared:
    def test_unit_drift_unit_covariance(self):
        # 2 max{1,0} + 2 max{1,1} + 0 = 4, independent of eta
        for eta in (1.0, 0.5, 2.0**-7):
            assert compute_m_sq(consts(), eta) == 4.0

    def test_ellipticity_violation_rejected(self):
        with pytest.raises(ValidationError, match="uniform ellipticity"):
            consts(sigma0=0.0, sigma1=0.0)

    def test_mixed_terms(self):
        c = consts(m0=2.0, b_at_zero_norm=3.0, dim=2, sigma1=1.0, m1=1.0, alpha=1.0)
        # 2 max{4,9} + 2 max{4,2} + 3 * 1 * 1 = 18 + 8 + 3
        assert compute_m_sq(c, 1.0) == 29.0

    def test_eta_out_of_range(self):
        with pytest.raises(ValidationError, match="step size"):
            compute_m_sq(consts(), 1.5)


class TestConstantsBundle:
    def test_growth_rate_from_m_sq(self):
        b = compute_constants(consts(), 2.0**-6, 1)
        assert b.m_sq == 4.0
        assert b.c_growth == 40.0

    def test_window_thresholds(self):
        # mixed form: 1 + m0 + M + 2 m0^2 + M^2 + M^2 m_eps^2 = 1+1+2+2+4+0
        b = compute_constants(consts(), 2.0**-6, 1)
        assert b.l_window_main == 10.0
        assert b.l_window_alt == 11.0
        assert b.l_window == 11.0

    def test_window_threshold_with_clt_constant(self):
        main, alt = window_gain_thresholds(consts(m_eps=2.0), 4.0)
        assert main == 10.0 + 4.0 * 4.0
        assert alt == 11.0

    def test_degenerate_window_constant_noise_only(self):
        c = consts(m0=0.0, m1=0.0, m_eps=0.5, sigma1=2.0, sigma0=1.0, dim=3)
        b = compute_constants(c, 0.25, 1)
        assert b.c_window == pytest.approx(2.0 * 4.0 * 3 * 4.0 * 0.25)

    def test_increment_constant(self):
        b = compute_constants(consts(), 2.0**-6, 1)
        assert b.c_increment == pytest.approx(12.0 * 4.0 * math.exp(41.0 * 2.0**-6))

    def test_batch_window_precondition(self):
        with pytest.raises(PreconditionError, match="s_batch"):
            compute_constants(consts(), 0.5, 3)
        with pytest.raises(PreconditionError):
            compute_constants(consts(), 0.5, 0)

    def test_all_fields_nonnegative(self):
        for c in (consts(), consts(m0=0.3, m1=0.7, m_eps=1.0, dim=4, sigma1=2.0)):
            b = compute_constants(c, 2.0**-4, 2, np.array([1.0, -2.0, 0.0, 0.5][: c.dim]))
            for key, val in b.as_dict().items():
                assert val >= 0.0, key
                assert not math.isnan(val), key

    def test_c_window_strictly_increasing_in_m1(self):
        vals = [
            compute_constants(consts(m1=m1), 2.0**-5, 1).c_window
            for m1 in (0.1, 0.5, 1.0, 2.0)
        ]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_invariant_under_coordinate_permutation_of_start(self):
        c = consts(dim=3)
        x0 = np.array([1.0, -2.0, 0.5])
        a = compute_constants(c, 2.0**-5, 1, x0)
        b = compute_constants(c, 2.0**-5, 1, x0[::-1])
        assert a.as_dict() == b.as_dict()

    def test_corrector_threshold_variants(self):
        # max of 2 m0 + 4 m0 eta^gamma and 2 m0 + 4 m0^2 eta^gamma
        assert corrector_gain_threshold(consts(m0=0.5), 1.0) == 0.5 * 2 + 4 * 0.5
        assert corrector_gain_threshold(consts(m0=2.0), 1.0) == 4.0 + 16.0


class TestRatePrediction:
    def test_sgd_gaussian(self):
        c = consts(gamma=1, alpha=1.0, beta=0.0)
        r = predict_rate(c, chi0=1)
        assert r.theta == 1.0
        assert r.overall_exponent == 0.75

    def test_sgld_gaussian(self):
        c = consts(gamma=0, alpha=0.5, beta=1.0)
        r = predict_rate(c, chi0=1)
        assert r.theta == 0.5
        assert r.overall_exponent == 0.25

    def test_sglb_any_noise(self):
        c = consts(gamma=0, alpha=0.5, beta=0.0)
        r = predict_rate(c, chi0=0)
        assert r.theta == 0.25
        assert r.secondary_exponent == 0.125
        assert r.overall_exponent == 0.125

    def test_vanishing_bias_short_circuits(self):
        c = consts(gamma=1, alpha=ALPHA_VANISHES, beta=0.0, bias_vanishes=True)
        assert predict_rate(c, 1).theta == 1.0

    def test_monotone_in_alpha_and_beta(self):
        alphas = np.linspace(0.05, 1.5, 10)
        betas = np.linspace(0.0, 1.0, 10)
        for gamma in (0, 1):
            for chi0 in (0, 1):
                thetas = np.array(
                    [
                        predict_rate(consts(gamma=gamma, alpha=a, beta=b), chi0).theta
                        for a in alphas
                        for b in betas
                    ]
                ).reshape(10, 10)
                assert np.all(np.diff(thetas, axis=0) >= 0), (gamma, chi0, "alpha")
                assert np.all(np.diff(thetas, axis=1) >= 0), (gamma, chi0, "beta")

    def test_beta_inert_for_gaussian(self):
        for beta in (0.0, 0.25, 0.5, 1.0):
            r = predict_rate(consts(gamma=0, alpha=0.4, beta=beta), chi0=1)
            assert r.theta == predict_rate(consts(gamma=0, alpha=0.4, beta=0.0), 1).theta

    def test_invariants(self):
        for gamma in (0, 1):
            for chi0 in (0, 1):
                for alpha in (0.25, 0.5, 1.0, ALPHA_VANISHES):
                    r = predict_rate(consts(gamma=gamma, alpha=alpha, beta=0.5), chi0)
                    assert 0 < r.theta <= alpha
                    assert r.overall_exponent <= r.theta


class TestMomentEnvelope:
    def test_at_zero_time(self):
        assert moment_envelope(consts(), 0.0, 0.0) == 1.0
        assert moment_envelope(consts(), np.array([2.0]), 0.0) == 5.0

    def test_hand_value(self):
        # m_sq = 4 -> growth rate 40; e^{40 * 0.1} = e^4
        assert moment_envelope(consts(), 0.0, 0.1) == pytest.approx(math.exp(4.0))

    def test_nondecreasing(self):
        ts = np.linspace(0.0, 2.0, 25)
        vals = [moment_envelope(consts(), 1.0, t) for t in ts]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        hb = horizon_bound(consts(), 1.0, 2.0)
        assert hb.r0_sq == 1.0
        assert hb.r_sq_of_t(0.0) == 2.0
        assert hb.r_sq_of_t(1.0) >= 1.0


class TestValidation:
    @pytest.mark.parametrize(
        "field,value,clause",
        [
            ("alpha", 0.0, "alpha"),
            ("beta", 1.5, "beta"),
            ("gamma", 2, "gamma"),
            ("m0", -1.0, "m0"),
            ("dim", 0, "dim"),
        ],
    )
    def test_field_violations(self, field, value, clause):
        with pytest.raises(ValidationError, match=clause):
            consts(**{field: value})

    def test_bundle_is_frozen(self):
        b = compute_constants(consts(), 0.5, 1)
        with pytest.raises(dataclasses.FrozenInstanceError):
            b.c3 = 0.0
