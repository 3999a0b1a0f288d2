"""Gaussian-nugget likelihood, fitting, and kriging tests."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mwgp.covariance import CovParams, SpaceTimePoint
from mwgp.errors import (
    FactorizationError,
    InsufficientDataError,
    InsufficientVarianceError,
    InvalidParameterError,
)
from mwgp.gaussian import (
    GaussianPredictive,
    OptimizerOptions,
    YearBlock,
    chol_spd,
    default_init,
    fit_mle_gaussian,
    gauss_loglik,
    gaussian_interval,
    predict_gaussian,
)
from mwgp.validation import simulate_field

from conftest import PARAMS, dense_mvn_loglik, explicit_conditional, random_block


def synth_blocks(params, m, n_years, seed, span=6.0):
    rng = np.random.default_rng(seed)
    locs = np.column_stack([rng.uniform(-span, span, m),
                            rng.uniform(-span, span, m),
                            rng.uniform(0.0, 60.0, m)])
    return simulate_field(params, locs, n_years, seed)


class TestGaussLoglik:
    def test_scalar_zero_observation(self):
        block = YearBlock(0, [0.0], [0.0], [0.0], [0.0])
        expected = -0.5 * (math.log(PARAMS.phi + PARAMS.sigma2)
                           + math.log(2.0 * math.pi))
        assert gauss_loglik([block], PARAMS) == pytest.approx(expected, rel=1e-12)

    def test_additive_over_years(self, rng):
        a = random_block(rng, 5, year=0)
        b = random_block(rng, 7, year=1)
        total = gauss_loglik([a, b], PARAMS)
        assert total == pytest.approx(
            gauss_loglik([a], PARAMS) + gauss_loglik([b], PARAMS), rel=1e-12)

    def test_empty_block_contributes_zero(self, rng):
        a = random_block(rng, 4)
        empty = YearBlock(1, [], [], [], [])
        assert gauss_loglik([a, empty], PARAMS) == \
            pytest.approx(gauss_loglik([a], PARAMS), rel=1e-14)

    def test_dense_mvn_oracle(self, rng):
        from mwgp.covariance import cov_matrix
        for _ in range(25):
            m = int(rng.integers(1, 7))
            block = random_block(rng, m)
            cov = cov_matrix(block.points, PARAMS) + PARAMS.sigma2 * np.eye(m)
            expected = dense_mvn_loglik(block.values, cov)
            got = gauss_loglik([block], PARAMS)
            assert abs(got - expected) <= 1e-8 * abs(expected)

    def test_invariant_to_observation_order(self, rng):
        block = random_block(rng, 9)
        perm = rng.permutation(9)
        shuffled = YearBlock(0, block.lat[perm], block.lon[perm],
                             block.t[perm], block.values[perm])
        assert gauss_loglik([shuffled], PARAMS) == \
            pytest.approx(gauss_loglik([block], PARAMS), rel=1e-10)

    def test_invariant_to_year_order(self, rng):
        blocks = [random_block(rng, 5, year=y) for y in range(3)]
        assert gauss_loglik(list(reversed(blocks)), PARAMS) == \
            pytest.approx(gauss_loglik(blocks, PARAMS), rel=1e-12)


class TestCholSpd:
    def test_gram_identity(self, rng):
        A = rng.standard_normal((6, 6))
        spd = A @ A.T + 6 * np.eye(6)
        L = chol_spd(spd, scale=1.0)
        np.testing.assert_allclose(L @ L.T, spd, rtol=1e-10, atol=1e-10)

    def test_failure_reported(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
        with pytest.raises(FactorizationError):
            chol_spd(bad, scale=1.0,
                     opts=OptimizerOptions(ridge=1e-18, ridge_tries=1))


class TestFitMleGaussian:
    def test_insufficient_data(self, rng):
        block = random_block(rng, 5)
        with pytest.raises(InsufficientDataError):
            fit_mle_gaussian([block])

    def test_degenerate_values_rejected(self):
        rng = np.random.default_rng(0)
        block = YearBlock(0, rng.uniform(-3, 3, 25), rng.uniform(-3, 3, 25),
                          rng.uniform(0, 30, 25), np.full(25, 2.5))
        with pytest.raises(InsufficientVarianceError):
            fit_mle_gaussian([block])

    def test_ascent_from_default_init(self):
        params = CovParams(1.0, 3.0, 5.0, 5.0, 0.3)
        blocks = synth_blocks(params, 60, 2, seed=11)
        init = default_init(blocks)
        fitted, report = fit_mle_gaussian(blocks, init)
        assert gauss_loglik(blocks, fitted) >= gauss_loglik(blocks, init) - 1e-6
        assert report.loglik == pytest.approx(gauss_loglik(blocks, fitted),
                                              rel=1e-9)

    def test_gradient_small_at_optimum(self):
        params = CovParams(1.0, 3.0, 5.0, 5.0, 0.3)
        blocks = synth_blocks(params, 80, 2, seed=3)
        fitted, report = fit_mle_gaussian(blocks)
        base = gauss_loglik(blocks, fitted)
        # central finite differences on the log-parameters
        eps = 1e-5
        grads = []
        for name in ("phi", "theta_lat", "theta_lon", "theta_t", "sigma2"):
            hi = {name: getattr(fitted, name) * math.exp(eps)}
            lo = {name: getattr(fitted, name) * math.exp(-eps)}
            from dataclasses import replace
            up = gauss_loglik(blocks, replace(fitted, **hi))
            dn = gauss_loglik(blocks, replace(fitted, **lo))
            grads.append((up - dn) / (2 * eps))
        assert np.max(np.abs(grads)) < 1e-3 * abs(base)

    def test_bitwise_reproducible(self):
        params = CovParams(1.0, 3.0, 5.0, 5.0, 0.3)
        blocks = synth_blocks(params, 60, 2, seed=7)
        f1, _ = fit_mle_gaussian(blocks)
        f2, _ = fit_mle_gaussian(blocks)
        assert f1 == f2

    def test_moderate_recovery_sanity(self):
        # Light version of the full recovery study: one seed, loose
        # factor-of-2 bands, just to catch gross estimator breakage.
        params = CovParams(1.0, 3.0, 5.0, 5.0, 0.3)
        blocks = synth_blocks(params, 250, 6, seed=1)
        fitted, report = fit_mle_gaussian(blocks)
        assert report.converged
        for name in ("phi", "theta_lat", "theta_lon", "theta_t", "sigma2"):
            ratio = getattr(fitted, name) / getattr(params, name)
            assert 0.5 < ratio < 2.0, f"{name} off by {ratio}"


class TestPredictGaussian:
    def test_prior_for_empty_block(self):
        empty = YearBlock(0, [], [], [], [])
        pred = predict_gaussian(SpaceTimePoint(0, 0, 0), empty, PARAMS)
        assert pred.mean == 0.0
        assert pred.variance == pytest.approx(PARAMS.phi + PARAMS.sigma2)

    def test_single_coincident_observation(self):
        y1 = 1.7
        block = YearBlock(0, [2.0], [3.0], [4.0], [y1])
        pred = predict_gaussian(SpaceTimePoint(2.0, 3.0, 4.0), block, PARAMS)
        tot = PARAMS.phi + PARAMS.sigma2
        assert pred.mean == pytest.approx(PARAMS.phi / tot * y1, rel=1e-12)
        assert pred.variance == pytest.approx(tot - PARAMS.phi ** 2 / tot,
                                              rel=1e-12)

    def test_zero_nugget_interpolates_exactly(self):
        params = CovParams(1.3, 2.0, 4.0, 7.0, 0.0)
        block = YearBlock(0, [1.0, -2.0], [0.5, 3.0], [10.0, 20.0], [0.7, -0.4])
        pred = predict_gaussian(SpaceTimePoint(1.0, 0.5, 10.0), block, params)
        assert pred.mean == pytest.approx(0.7, rel=1e-9)
        assert pred.variance == pytest.approx(0.0, abs=1e-9)

    def test_conditional_gaussian_oracle(self, rng):
        for _ in range(25):
            m = int(rng.integers(1, 7))
            block = random_block(rng, m)
            target = SpaceTimePoint(rng.uniform(-6, 6), rng.uniform(-6, 6),
                                    rng.uniform(0, 40))
            mean, var = explicit_conditional(target, block, PARAMS)
            pred = predict_gaussian(target, block, PARAMS)
            assert abs(pred.mean - mean) <= 1e-8 * max(1.0, abs(mean))
            assert abs(pred.variance - var) <= 1e-8 * max(1.0, abs(var))

    def test_variance_bounds(self, rng):
        for _ in range(10):
            block = random_block(rng, int(rng.integers(1, 9)))
            target = SpaceTimePoint(rng.uniform(-6, 6), rng.uniform(-6, 6),
                                    rng.uniform(0, 40))
            pred = predict_gaussian(target, block, PARAMS)
            assert 0.0 <= pred.variance <= PARAMS.phi + PARAMS.sigma2 + 1e-12

    def test_extra_observation_never_inflates_variance(self, rng):
        for _ in range(10):
            block = random_block(rng, 6)
            target = SpaceTimePoint(rng.uniform(-4, 4), rng.uniform(-4, 4),
                                    rng.uniform(0, 40))
            smaller = block.subset(np.arange(6) < 5)
            v_small = predict_gaussian(target, smaller, PARAMS).variance
            v_full = predict_gaussian(target, block, PARAMS).variance
            assert v_full <= v_small + 1e-10


class TestGaussianInterval:
    def test_standard_normal_quantile(self):
        lo, hi = gaussian_interval(GaussianPredictive(0.0, 1.0), 0.05)
        assert hi == pytest.approx(1.959964, abs=1e-5)
        assert lo == pytest.approx(-hi)

    def test_degenerate_variance(self):
        lo, hi = gaussian_interval(GaussianPredictive(2.0, 0.0), 0.1)
        assert lo == hi == 2.0

    def test_width_scales_with_sd(self):
        w1 = np.diff(gaussian_interval(GaussianPredictive(0, 1.0), 0.05))[0]
        w4 = np.diff(gaussian_interval(GaussianPredictive(0, 4.0), 0.05))[0]
        assert w4 == pytest.approx(2.0 * w1, rel=1e-12)

    @given(st.floats(0.01, 0.5), st.floats(0.01, 0.5))
    def test_nesting(self, a1, a2):
        wide, narrow = sorted((a1, a2))
        pred = GaussianPredictive(0.3, 2.0)
        lo_w, hi_w = gaussian_interval(pred, wide)
        lo_n, hi_n = gaussian_interval(pred, narrow)
        assert lo_w <= lo_n + 1e-12 and hi_n <= hi_w + 1e-12

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_validated(self, alpha):
        with pytest.raises(InvalidParameterError):
            gaussian_interval(GaussianPredictive(0, 1), alpha)
