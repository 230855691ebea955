import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfpart import (
    MarketParams,
    MarketState,
    SingleAssetMarket,
    expected_power_s1,
    radon_nikodym_weights,
    ratio_params,
    sample_paths,
    sigma_hat,
)
from perfpart.errors import MomentOverflowError, ValidationError
from perfpart.market import discounted_market
from perfpart.simulation import mc_mean

from reference import SIGMA_HAT_STD, market


class TestValidation:
    @pytest.mark.parametrize(
        "bad",
        [
            dict(sigma2=0.03),  # sigma2 < sigma1
            dict(sigma1=0.0),
            dict(mu1=0.1),  # mu1 > mu2
            dict(r=0.07),  # r > mu1
            dict(r=-0.01),
            dict(rho12=1.0),
            dict(rho12=-1.0),
            dict(mu2=math.nan),
            dict(sigma2=math.inf),
        ],
    )
    def test_rejects(self, bad):
        with pytest.raises(ValidationError):
            market(**bad)

    def test_degenerate_flag_admits_zero_reserve_volatility(self):
        p = market(sigma1=0.0, mu1=0.0, degenerate=True)
        assert sigma_hat(p) == pytest.approx(0.214, rel=1e-15)

    def test_equal_drifts_accepted(self):
        assert market(mu2=0.066).mu2 == 0.066

    def test_state_validation(self):
        with pytest.raises(ValidationError):
            MarketState(0.0, 0.0, 1.0)
        with pytest.raises(ValidationError):
            MarketState(-0.1, 1.0, 1.0)
        assert MarketState(0.5, 2.0, 3.0).ratio == 1.5

    def test_single_asset_validation(self):
        with pytest.raises(ValidationError):
            SingleAssetMarket(0.05, -0.1)
        with pytest.raises(ValidationError):
            SingleAssetMarket(0.05, 0.1, s0=0.0)


class TestSigmaHat:
    def test_standard_market(self):
        s1, s2, rho = 0.037, 0.214, -0.15
        exact = mpmath.sqrt(mpmath.mpf(s1) ** 2 - 2 * mpmath.mpf(rho) * s1 * s2 + mpmath.mpf(s2) ** 2)
        assert sigma_hat(market()) == pytest.approx(float(exact), rel=1e-15)
        assert sigma_hat(market()) == pytest.approx(SIGMA_HAT_STD, rel=1e-11)
        assert abs(sigma_hat(market()) - 0.223) <= 0.0005

    def test_pythagorean(self):
        p = MarketParams(0.05, 0.05, 0.2, 0.3, 0.0)
        assert sigma_hat(p) == pytest.approx(math.sqrt(0.13), rel=1e-15)

    def test_identical_assets_near_perfect_correlation(self):
        vals = [sigma_hat(MarketParams(0.05, 0.05, 0.2, 0.2, 1 - 10.0**-j)) for j in (2, 4, 8)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-4

    @settings(max_examples=200, deadline=None)
    @given(
        s1=st.floats(0.01, 0.5),
        ds=st.floats(0.0, 0.5),
        rho_a=st.floats(-0.99, 0.99),
        rho_b=st.floats(-0.99, 0.99),
    )
    def test_decreasing_in_rho_and_bounded(self, s1, ds, rho_a, rho_b):
        lo, hi = sorted((rho_a, rho_b))
        pa = MarketParams(0.05, 0.06, s1, s1 + ds, lo)
        pb = MarketParams(0.05, 0.06, s1, s1 + ds, hi)
        assert sigma_hat(pa) >= sigma_hat(pb)
        assert ds - 1e-12 <= sigma_hat(pa) <= 2 * s1 + ds + 1e-12

    def test_covariance_is_sigma_matrix_gram(self):
        p = market()
        sig = p.sigma_matrix
        np.testing.assert_allclose(sig @ sig.T, p.covariance, rtol=1e-14, atol=1e-17)


class TestRatioParams:
    def test_k1_is_excess_drift(self):
        assert ratio_params(market(), 1).mu_hat_tilde_k == pytest.approx(0.031, abs=1e-15)

    def test_k0_is_real_world_drift(self):
        rp = ratio_params(market(), 0)
        p = market()
        expected = (p.mu2 - p.mu1) + (p.sigma1**2 - p.rho12 * p.sigma1 * p.sigma2)
        assert rp.mu_hat == pytest.approx(expected, rel=1e-14)
        assert rp.mu_hat_tilde_k == pytest.approx(rp.mu_hat, rel=1e-14)

    def test_constant_increment(self):
        p = market()
        inc = p.rho12 * p.sigma1 * p.sigma2 - p.sigma1**2
        drifts = [ratio_params(p, k).mu_hat_tilde_k for k in range(9)]
        np.testing.assert_allclose(np.diff(drifts), inc, rtol=1e-12)

    def test_negative_k(self):
        with pytest.raises(ValidationError):
            ratio_params(market(), -1)

    def test_discounted_market(self):
        dm = discounted_market(market(), 1)
        assert (dm.mu, dm.r, dm.s0) == (pytest.approx(0.031), 0.0, 1.0)
        assert dm.sigma == sigma_hat(market())

    def test_k2_drift_by_weighted_regression(self):
        """Under P~_2, ln(S2/S1)(T) has mean (mu_tilde_2 - sigma_hat^2/2) T."""
        p = market()
        b = sample_paths(p, 100.0, 100.0, 1.0, n_paths=1_000_000, seed=3)
        w = radon_nikodym_weights(b, p, 2)
        log_r = np.log(b.s2 / b.s1)
        est = mc_mean(w * log_r)
        rp = ratio_params(p, 2)
        exact = rp.mu_hat_tilde_k - 0.5 * rp.sigma_hat**2
        assert abs(est.value - exact) < 3 * est.std_error


class TestExpectedPowerS1:
    def test_trivial(self):
        p = market()
        assert expected_power_s1(p, 100.0, 0, 1.0) == 1.0
        assert expected_power_s1(p, 100.0, 1, 2.0) == pytest.approx(100 * math.exp(0.132), rel=1e-15)

    def test_quadrature(self):
        p = market()
        for k in range(1, 5):
            f = lambda z: (100 * mpmath.exp((p.mu1 - p.sigma1**2 / 2) + p.sigma1 * z)) ** k * mpmath.npdf(z)
            exact = mpmath.quad(f, [-mpmath.inf, 0, mpmath.inf])
            assert expected_power_s1(p, 100.0, k, 1.0) == pytest.approx(float(exact), rel=1e-13)

    def test_monte_carlo_k3(self):
        p = market()
        b = sample_paths(p, 100.0, 100.0, 1.0, n_paths=1_000_000, seed=5)
        est = mc_mean(b.s1**3)
        assert abs(est.value - expected_power_s1(p, 100.0, 3, 1.0)) < 3 * est.std_error

    def test_overflow_guard(self):
        with pytest.raises(MomentOverflowError):
            expected_power_s1(market(), 1e300, 8, 1.0)

    def test_rejects_bad_inputs(self):
        for args in ((100.0, -1, 1.0), (100.0, 1, -1.0), (0.0, 1, 1.0)):
            with pytest.raises(ValidationError):
                expected_power_s1(market(), *args)


def test_log_return_covariance():
    p = market()
    b = sample_paths(p, 1.0, 1.0, 0.5, n_paths=400_000, seed=9, antithetic=False)
    x = np.stack([np.log(b.s1), np.log(b.s2)])
    cov = np.cov(x)
    target = p.covariance * 0.5
    # Standard error of a sample covariance entry: sqrt((c_ii c_jj + c_ij^2) / n).
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / b.n_paths)
    assert np.all(np.abs(cov - target) < 3 * se)


def test_market_objects_are_immutable():
    p = market()
    with pytest.raises(Exception):
        p.mu1 = 0.0  # type: ignore[misc]
