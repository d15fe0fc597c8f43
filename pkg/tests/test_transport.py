"""Wasserstein-2 estimator tests against brute-force and closed-form oracles."""

import itertools
import math

import numpy as np
import pytest

from itolab.core import AssumptionConstants
from itolab.errors import DataError, PreconditionError, ValidationError
from itolab.rng import RngStream
from itolab.sde import GaussianLaw
from itolab.transport import (
    EmpiricalMeasure,
    c_w_bound,
    kl_to_w2,
    sampling_floor,
    w2_exact_1d,
    w2_exact_assignment,
    w2_gaussian,
    w2_sliced,
)

STREAM = RngStream(777)


def brute_force_w2(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum mean squared matching cost over all permutations."""
    n = a.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = np.sum((a - b[list(perm)]) ** 2) / n
        best = min(best, cost)
    return math.sqrt(best)


class TestExact1d:
    def test_identical_samples(self):
        m = EmpiricalMeasure(np.array([0.5, -1.0, 2.0]))
        assert w2_exact_1d(m, m).value == 0.0

    def test_translation(self):
        a = EmpiricalMeasure(np.array([0.0, 2.0]))
        b = EmpiricalMeasure(np.array([1.0, 3.0]))
        assert w2_exact_1d(a, b).value == pytest.approx(1.0)

    def test_three_point_brute_force(self):
        xa = np.array([0.0, 0.0, 3.0])
        xb = np.array([1.0, 1.0, 1.0])
        est = w2_exact_1d(EmpiricalMeasure(xa), EmpiricalMeasure(xb))
        assert est.value == pytest.approx(math.sqrt(2.0))
        assert est.value == pytest.approx(brute_force_w2(xa[:, None], xb[:, None]))

    def test_unequal_counts_quantile_integration(self):
        # quantile functions are piecewise constant; integrate segments:
        # [0,1/3): (0-1)^2, [1/3,1/2): (0-2)^2, [1/2,2/3): 0, [2/3,1): (2-3)^2
        a = EmpiricalMeasure(np.array([0.0, 2.0]))
        b = EmpiricalMeasure(np.array([1.0, 2.0, 3.0]))
        expect = math.sqrt(1.0 / 3.0 + 4.0 / 6.0 + 0.0 + 1.0 / 3.0)
        assert w2_exact_1d(a, b).value == pytest.approx(expect)

    def test_weighted_matches_replication(self):
        a = EmpiricalMeasure(np.array([0.0, 1.0]), np.array([0.75, 0.25]))
        a_rep = EmpiricalMeasure(np.array([0.0, 0.0, 0.0, 1.0]))
        b = EmpiricalMeasure(np.array([-1.0, 2.0, 0.5, 0.5]))
        assert w2_exact_1d(a, b).value == pytest.approx(w2_exact_1d(a_rep, b).value)

    def test_dimension_error(self):
        m2 = EmpiricalMeasure(np.zeros((4, 2)))
        with pytest.raises(DataError, match="1-D"):
            w2_exact_1d(m2, m2)

    def test_bootstrap_stderr_present(self):
        g = STREAM.child("boot").generator()
        a = EmpiricalMeasure(g.standard_normal(500))
        b = EmpiricalMeasure(g.standard_normal(500) + 1.0)
        est = w2_exact_1d(a, b, stream=STREAM.child("boot-se"))
        assert 0.0 < est.stderr < 0.5


class TestExactAssignment:
    def test_single_point(self):
        a = EmpiricalMeasure(np.array([[0.0, 0.0]]))
        b = EmpiricalMeasure(np.array([[3.0, 4.0]]))
        assert w2_exact_assignment(a, b).value == pytest.approx(5.0)

    def test_matches_1d_oracle(self):
        g = STREAM.child("asg1d").generator()
        xa, xb = g.standard_normal(64), g.standard_normal(64)
        v1 = w2_exact_1d(EmpiricalMeasure(xa), EmpiricalMeasure(xb)).value
        v2 = w2_exact_assignment(EmpiricalMeasure(xa), EmpiricalMeasure(xb)).value
        assert v2 == pytest.approx(v1, abs=1e-12)

    def test_prefers_non_crossing_matching(self):
        a = np.array([[0.0, 0.0], [2.0, 2.0]])
        b = np.array([[0.0, 1.0], [2.0, 1.0]])
        est = w2_exact_assignment(EmpiricalMeasure(a), EmpiricalMeasure(b))
        straight = np.mean([1.0, 1.0])  # squared costs of the parallel matching
        crossed = np.mean([5.0, 5.0])
        assert est.value == pytest.approx(math.sqrt(straight))
        assert est.value < math.sqrt(crossed)

    def test_brute_force_on_small_instances(self):
        g = STREAM.child("bf").generator()
        for trial in range(100):
            n = int(g.integers(2, 9))
            d = int(g.integers(1, 4))
            a = g.standard_normal((n, d))
            b = g.standard_normal((n, d)) + g.standard_normal(d)
            fast = w2_exact_assignment(EmpiricalMeasure(a), EmpiricalMeasure(b)).value
            assert fast == pytest.approx(brute_force_w2(a, b), abs=1e-9)

    def test_size_cap_directs_to_sliced(self):
        pts = np.zeros((5000, 2))
        with pytest.raises(DataError, match="sliced"):
            w2_exact_assignment(EmpiricalMeasure(pts), EmpiricalMeasure(pts))

    def test_count_mismatch(self):
        with pytest.raises(DataError, match="equal counts"):
            w2_exact_assignment(
                EmpiricalMeasure(np.zeros((3, 1))), EmpiricalMeasure(np.zeros((4, 1)))
            )


class TestSliced:
    def test_identical(self):
        g = STREAM.child("sl0").generator()
        m = EmpiricalMeasure(g.standard_normal((128, 3)))
        assert w2_sliced(m, m, 32, STREAM.child("sl0p")).value == 0.0

    def test_shift_in_1d_equals_norm(self):
        g = STREAM.child("sl1").generator()
        x = g.standard_normal(256)
        a = EmpiricalMeasure(x)
        b = EmpiricalMeasure(x + 2.5)
        assert w2_sliced(a, b, 64, STREAM.child("sl1p")).value == pytest.approx(2.5)

    def test_isotropic_shift_factor(self):
        d, n = 4, 2048
        g = STREAM.child("sl2").generator()
        x = g.standard_normal((n, d))
        v = np.array([2.0, 0.0, 0.0, 0.0])
        est = w2_sliced(EmpiricalMeasure(x), EmpiricalMeasure(x + v), 512, STREAM.child("sl2p"))
        assert est.value == pytest.approx(np.linalg.norm(v) / math.sqrt(d), rel=0.1)

    def test_never_exceeds_exact(self):
        g = STREAM.child("sl3").generator()
        for trial in range(5):
            a = g.standard_normal((512, 3))
            b = g.standard_normal((512, 3)) * 1.3 + 0.4
            exact = w2_exact_assignment(EmpiricalMeasure(a), EmpiricalMeasure(b)).value
            sliced = w2_sliced(EmpiricalMeasure(a), EmpiricalMeasure(b), 64, STREAM.child("sl3p", trial))
            assert sliced.value <= exact + 3.0 * max(sliced.stderr, 1e-6)

    def test_projection_count_precondition(self):
        m = EmpiricalMeasure(np.zeros((8, 2)))
        with pytest.raises(PreconditionError):
            w2_sliced(m, m, 8, STREAM)


class TestGaussianClosedForm:
    def test_translation(self):
        p = GaussianLaw(np.zeros(1), np.eye(1))
        q = GaussianLaw(np.ones(1), np.eye(1))
        assert w2_gaussian(p, q) == pytest.approx(1.0)

    def test_scale_1d(self):
        p = GaussianLaw(np.zeros(1), np.eye(1))
        q = GaussianLaw(np.zeros(1), 4.0 * np.eye(1))
        assert w2_gaussian(p, q) == pytest.approx(1.0)

    def test_identical(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        p = GaussianLaw(np.array([1.0, -1.0]), cov)
        assert w2_gaussian(p, p) == pytest.approx(0.0, abs=1e-9)

    def test_non_psd_rejected(self):
        class Law:
            mean = np.zeros(2)
            cov = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues -1, 3

        with pytest.raises(ValidationError, match="positive semi-definite"):
            w2_gaussian(Law(), GaussianLaw(np.zeros(2), np.eye(2)))

    def test_empirical_consistency_with_closed_form(self):
        p = GaussianLaw(np.zeros(1), np.eye(1))
        q = GaussianLaw(np.array([1.0]), np.array([[4.0]]))
        closed = w2_gaussian(p, q)
        scale = 2.0
        errs = []
        for i, n in enumerate((1_000, 10_000, 100_000)):
            a = EmpiricalMeasure(p.sample(n, STREAM.child("gc", i, 0)))
            b = EmpiricalMeasure(q.sample(n, STREAM.child("gc", i, 1)))
            err = abs(w2_exact_1d(a, b).value - closed)
            errs.append(err)
            assert err <= 5.0 * scale / math.sqrt(n)
        assert errs[0] > errs[2]


class TestMetricAxioms:
    def test_symmetry_identity_triangle(self):
        g = STREAM.child("axiom").generator()
        for trial in range(200):
            n, d = 16, int(g.integers(1, 3))
            a = g.standard_normal((n, d))
            b = g.standard_normal((n, d)) + 0.5
            c = g.standard_normal((n, d)) - 0.5
            ma, mb, mc = (EmpiricalMeasure(v) for v in (a, b, c))
            est = w2_exact_assignment if d > 1 else w2_exact_1d
            dab = est(ma, mb).value
            dba = est(mb, ma).value
            dac = est(ma, mc).value
            dcb = est(mc, mb).value
            assert abs(dab - dba) <= 1e-12
            assert est(ma, ma).value == 0.0
            assert dab <= dac + dcb + 1e-9


class TestEntropyConversion:
    def test_zero_entropy(self):
        assert kl_to_w2(0.0, 3.0) == 0.0

    def test_hand_value(self):
        assert kl_to_w2(2.0, 1.0) == pytest.approx(math.sqrt(2.0) + 1.0)

    def test_linear_in_prefactor(self):
        assert kl_to_w2(0.7, 2.0) == pytest.approx(2.0 * kl_to_w2(0.7, 1.0))

    def test_negative_entropy_rejected(self):
        with pytest.raises(DataError):
            kl_to_w2(-0.1, 1.0)


def constants(**kw):
    base = dict(
        m0=2.0, m1=0.0, m_eps=0.0, sigma0=1.0, sigma1=1.0,
        alpha=0.5, beta=1.0, gamma=0, dim=2,
    )
    base.update(kw)
    return AssumptionConstants(**base)


class TestPrefactorBound:
    def test_hand_value_at_zero_time(self):
        assert c_w_bound(constants(), 0.0, 0.5) == pytest.approx(math.sqrt(2.0))

    def test_e_folding_time(self):
        c = constants()
        ratio = c_w_bound(c, 1.0 / c.m0, 0.5) / c_w_bound(c, 0.0, 0.5)
        assert ratio == pytest.approx(math.e)

    def test_gamma_scaling(self):
        eta = 0.3
        c0 = constants(gamma=0)
        c1 = constants(gamma=1)
        assert c_w_bound(c1, 0.7, eta) / c_w_bound(c0, 0.7, eta) == pytest.approx(
            math.sqrt(eta)
        )

    def test_degenerate_lipschitz_constant(self):
        with pytest.raises(DataError, match="m0"):
            c_w_bound(constants(m0=0.0), 1.0, 0.5)


class TestSamplingFloor:
    def test_floor_shrinks_with_sample_size(self):
        g = STREAM.child("floor").generator()
        small = sampling_floor(g.standard_normal(1_000))
        large = sampling_floor(g.standard_normal(100_000))
        assert large < small

    def test_floor_positive(self):
        g = STREAM.child("floor2").generator()
        assert sampling_floor(g.standard_normal((2_000, 2))) > 0.0


class TestEmpiricalMeasure:
    def test_weight_validation(self):
        with pytest.raises(ValidationError, match="sum to 1"):
            EmpiricalMeasure(np.zeros((2, 1)), np.array([0.6, 0.6]))

    def test_finite_validation(self):
        with pytest.raises(ValidationError, match="finite"):
            EmpiricalMeasure(np.array([np.nan, 0.0]))
