import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from locbo import conformal as cp
from locbo.gp import PredictiveNormal


def tf0(c=0.2, kappa=4.0, length=5.0, reg=0.0, eta1=0.01, w=0.0):
    return cp.ThresholdFunction(c=c, kappa=kappa, length=length, reg=reg, eta1=eta1, w=w)


class TestScore:
    def test_at_mean(self):
        assert cp.nc_score(PredictiveNormal(0.3, 2.0), 0.3) == 1.0

    def test_at_196(self):
        pred = PredictiveNormal(1.0, 4.0)
        assert cp.nc_score(pred, 1.0 + 1.959964 * 2.0) == pytest.approx(0.05, abs=1e-6)

    def test_deep_tail(self):
        assert cp.nc_score(PredictiveNormal(0.0, 1.0), 10.0) < 1e-20

    @given(d1=st.floats(0, 30), d2=st.floats(0, 30))
    def test_monotone(self, d1, d2):
        pred = PredictiveNormal(0.0, 1.0)
        s1, s2 = cp.nc_score(pred, d1), cp.nc_score(pred, -d2)
        assert 0.0 <= s1 <= 2.0
        if d1 < d2:
            assert s1 >= s2


class TestInterval:
    def test_median_threshold_is_point(self):
        iv = cp.interval(PredictiveNormal(0.5, 1.0), 1.0)
        assert iv.lower == iv.upper == 0.5

    def test_five_percent(self):
        iv = cp.interval(PredictiveNormal(0.0, 1.0), 0.05)
        assert iv.lower == pytest.approx(-1.95996, abs=1e-5)
        assert iv.upper == pytest.approx(1.95996, abs=1e-5)

    def test_clamping(self):
        big = cp.interval(PredictiveNormal(0.0, 1.0), 5.0)
        assert big.lower == big.upper == 0.0
        wide = cp.interval(PredictiveNormal(0.0, 1.0), -3.0)
        assert wide.threshold == cp.LAMBDA_MIN
        assert np.isfinite(wide.upper) and wide.upper > 4.0

    @settings(max_examples=200)
    @given(mu=st.floats(-10, 10), s=st.floats(0.01, 10), lam=st.floats(1e-5, 1.999))
    def test_outside_mass_and_centering(self, mu, s, lam):
        iv = cp.interval(PredictiveNormal(mu, s * s), lam)
        assert (iv.upper - mu) == pytest.approx(mu - iv.lower, abs=1e-9 * max(1, abs(mu)))
        outside = norm.cdf(iv.lower, mu, s) + norm.sf(iv.upper, mu, s)
        # above lam = 1 the half-width clamps at zero and all mass lies outside
        assert outside == pytest.approx(min(lam, 1.0), abs=1e-9)

    def test_score_duality(self, rng):
        for _ in range(1000):
            pred = PredictiveNormal(float(rng.normal()), float(rng.uniform(0.05, 4)))
            lam = float(rng.uniform(-0.2, 2.2))
            y = float(pred.mean + rng.normal() * 2 * math.sqrt(pred.variance))
            iv = cp.interval(pred, lam)
            inside = iv.lower <= y <= iv.upper
            assert inside == (cp.nc_score(pred, y) >= cp.effective_threshold(lam))

    def test_batch(self):
        pred = PredictiveNormal(np.zeros(3), np.ones(3))
        iv = cp.interval(pred, np.array([0.05, 1.0, 0.5]))
        assert iv.width.shape == (3,)
        assert iv.width[1] == 0.0


class TestThreshold:
    def test_empty_centers(self):
        assert cp.eval_threshold(tf0(c=0.3), np.array([1.0, 2.0])) == 0.3

    def test_one_center(self):
        x = np.array([0.5, -0.5])
        tf = tf0(c=0.1, kappa=4.0)
        tf = cp.ThresholdFunction(**{**tf.__dict__, "centers": (tuple(x),), "coeffs": (0.02,)})
        assert cp.eval_threshold(tf, x) == pytest.approx(0.1 + 0.02 * 4.0)

    def test_infinite_length_is_constant(self, rng):
        tf = cp.ThresholdFunction(c=0.1, kappa=2.0, length=math.inf, reg=0.0, eta1=0.01, w=0.0,
                                  centers=((0.0,),), coeffs=(0.05,))
        for x in rng.uniform(-100, 100, size=(10, 1)):
            assert cp.eval_threshold(tf, x) == pytest.approx(0.2)

    def test_zero_kappa(self, rng):
        tf = tf0(kappa=0.0)
        for t in range(1, 20):
            tf = cp.locp_update(tf, rng.normal(size=2), bool(rng.random() < 0.5), t, 0.2)
        assert cp.eval_threshold(tf, rng.normal(size=2)) == tf.c

    def test_batch_matches_pointwise(self, rng):
        tf = tf0()
        for t in range(1, 10):
            tf = cp.locp_update(tf, rng.normal(size=2), t % 3 == 0, t, 0.2)
        Q = rng.normal(size=(6, 2))
        np.testing.assert_allclose(cp.eval_threshold(tf, Q), [cp.eval_threshold(tf, q) for q in Q])


class TestLocpUpdate:
    def test_covered(self):
        tf = cp.locp_update(tf0(c=0.2), np.zeros(1), True, 1, 0.2)
        assert tf.c == pytest.approx(0.202)
        assert tf.coeffs == (pytest.approx(0.002),)

    def test_miscovered(self):
        tf = cp.locp_update(tf0(c=0.2), np.zeros(1), False, 1, 0.2)
        assert tf.c == pytest.approx(0.192)

    def test_shrinkage(self):
        tf = tf0(reg=4e-3, eta1=0.005)
        tf = cp.locp_update(tf, np.zeros(1), True, 1, 0.2)
        first = tf.coeffs[0]
        tf = cp.locp_update(tf, np.ones(1), True, 2, 0.2)
        assert tf.coeffs[0] == pytest.approx(first * (1 - 2e-5), rel=1e-14)

    def test_step_precondition(self):
        with pytest.raises(ValueError):
            cp.locp_update(tf0(reg=10.0, eta1=0.2), np.zeros(1), True, 1, 0.2)

    def test_pure(self):
        tf = tf0()
        cp.locp_update(tf, np.zeros(1), False, 1, 0.2)
        assert tf.c == 0.2 and tf.centers == ()

    def test_scalar_reference(self, rng):
        """kappa = 0 reproduces plain online CP state for state."""
        alpha, eta1, w = 0.2, 0.05, 0.3
        tf = cp.ThresholdFunction.initial(alpha, 0.0, 1.0, 0.0, eta1, w)
        c = alpha
        for t in range(1, 1001):
            covered = bool(rng.random() < 0.7)
            tf = cp.locp_update(tf, rng.normal(size=1), covered, t, alpha)
            c = c + eta1 * t ** (-w) * (alpha - (0.0 if covered else 1.0))
            assert tf.c == pytest.approx(c, abs=1e-12)

    def test_json_round_trip(self, rng):
        tf = tf0(length=math.inf)
        for t in range(1, 5):
            tf = cp.locp_update(tf, rng.normal(size=2), bool(t % 2), t, 0.2)
        text = tf.to_json()
        assert set(json.loads(text)) == {"c", "centers", "coeffs", "kappa", "l", "lambda", "eta1", "w", "t"}
        assert cp.ThresholdFunction.from_json(text) == tf


class TestRecalibrator:
    def test_all_covered(self):
        rec = cp.Recalibrator.identity(eta1=0.01)
        new = cp.ocbo_update(rec, np.ones(10, dtype=bool), 1)
        np.testing.assert_allclose(new.values, rec.values - 0.01 * rec.levels)

    def test_clamp_at_zero(self):
        rec = cp.Recalibrator(np.array([0.2, 0.8]), np.zeros(2), 0.1, 0.0)
        new = cp.ocbo_update(rec, [True, True], 1)
        assert np.all(new.values == 0.0)

    def test_interpolation(self):
        rec = cp.Recalibrator(np.array([0.1, 0.3]), np.array([0.2, 0.6]), 0.1, 0.0)
        assert rec(0.2) == pytest.approx(0.4)
        assert rec(0.1) == 0.2

    def test_grid(self):
        g = cp.default_level_grid()
        assert len(g) == 10 and g[0] == 0.05 and g[-1] == 0.95

    def test_values_stay_in_unit_interval(self, rng):
        rec = cp.Recalibrator.identity(eta1=0.3)
        for t in range(1, 200):
            rec = rec.update(None, rng.random(10) < 0.5, t)
            assert np.all((rec.values >= 0) & (rec.values <= 1))

    def test_wrong_flag_count(self):
        with pytest.raises(ValueError):
            cp.ocbo_update(cp.Recalibrator.identity(), [True], 1)

    def test_localized_starts_at_identity(self, rng):
        rec = cp.LocalizedRecalibrator.identity()
        np.testing.assert_allclose(rec.values_at(rng.normal(size=2)), rec.levels)

    def test_localized_infinite_length_matches_global_offset(self, rng):
        # with l = inf every center contributes kappa * coeff at every x
        rec = cp.LocalizedRecalibrator.identity(kappa=0.0, reg=0.0, eta1=0.01)
        glob = cp.Recalibrator.identity(eta1=0.01)
        for t in range(1, 30):
            flags = rng.random(10) < 0.5
            rec = rec.update(rng.normal(size=2), flags, t)
            glob = glob.update(None, flags, t)
        np.testing.assert_allclose(rec.values_at(np.zeros(2)), glob.values, atol=1e-12)


class TestAudit:
    def test_all_covered(self):
        a = cp.coverage_audit(np.zeros(5), -np.ones(5), np.ones(5), 0.2, 0.005, 0.004, 0.0, 5.0, 1.0)
        assert a.miscoverage_rate == 0.0
        assert a.satisfied

    def test_lipschitz(self):
        assert cp.rbf_lipschitz(4.0, 5.0) == pytest.approx(4 * math.sqrt(2) * math.exp(-0.5) / 5)
        assert cp.rbf_lipschitz(4.0, math.inf) == 0.0
        z = np.linspace(0, 20, 200001)
        slope = np.max(np.abs(np.diff(4 * np.exp(-z**2 / 25)) / np.diff(z)))
        assert slope == pytest.approx(cp.rbf_lipschitz(4.0, 5.0), rel=1e-4)

    def test_scalar_bound(self):
        a = cp.coverage_audit(np.zeros(100), np.ones(100), np.ones(100) * 2, 0.2, 0.01, 0.0, 0.0, 5.0, 1.0)
        assert a.bound == pytest.approx(0.2 + (2 / 0.01 + 2) / 10)

    def test_scalar_stream_converges(self):
        rng = np.random.default_rng(5)
        alpha, T = 0.2, 2000
        tf = cp.ThresholdFunction.initial(alpha, 0.0, 1.0, 0.0, 0.05, 0.0)
        pred = PredictiveNormal(0.0, 0.5)  # deliberately too narrow
        y = rng.standard_normal(T)
        lo, hi = np.empty(T), np.empty(T)
        for t in range(1, T + 1):
            iv = cp.interval(pred, cp.eval_threshold(tf, np.zeros(1)))
            lo[t - 1], hi[t - 1] = iv.lower, iv.upper
            tf = cp.locp_update(tf, np.zeros(1), bool(iv.lower <= y[t - 1] <= iv.upper), t, alpha)
        a = cp.coverage_audit(y, lo, hi, alpha, 0.05, 0.0, 0.0, 1.0, 1.0)
        assert abs(a.miscoverage_rate - alpha) <= 0.05
        assert a.satisfied

    def test_adversarial_alternating_stream(self):
        alpha, T = 0.2, 500
        tf = cp.ThresholdFunction.initial(alpha, 2.0, 1.0, 4e-3, 5e-3, 5e-2)
        rng = np.random.default_rng(1)
        X = rng.uniform(-3, 3, size=(T, 2))
        misses = []
        for t in range(1, T + 1):
            covered = t % 2 == 0
            misses.append(not covered)
            tf = cp.locp_update(tf, X[t - 1], covered, t, alpha)
        beta = cp.coverage_beta(5e-3, 4e-3, 2.0, 1.0, float(np.sqrt(72)))
        assert np.mean(misses) <= alpha + beta / math.sqrt(T) + 2.0
