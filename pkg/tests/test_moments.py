import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from perfpart import (
    CancellationError,
    DegenerateInputError,
    MarketParams,
    MomentOverflowError,
    SingleAssetMarket,
    StrategySpec,
    calibrate,
    central_moments,
    discounted_market,
    expected_power_s1,
    factorized_moment,
    m_star,
    mk_cppi,
    mk_cppp,
    mk_obpi,
    mk_obpp,
    sample_paths,
    sigma_hat,
    strategy_moments,
)
from perfpart.errors import ValidationError
from perfpart.moments import expected_cppp, expected_obpp, measure_shift, mk_obpi_from_upm
from perfpart.pricing import bs_call
from perfpart.simulation import estimate_raw_moment_tilted, mc_mean, radon_nikodym_weights, simulate_strategy

from reference import ALPHA, M_STAR_STD, T, V0, cppp_spec, market, obpp_spec, pi_market, moment_table_specs

mp.mp.dps = 30


def ratio_market():
    """The single-asset market of the index ratio, with unit start."""
    return discounted_market(market())


def lognormal_quad(payoff, mu, sigma, s0, T, kinks=()):
    """E[payoff(S_T)] for GBM by mpmath quadrature in the standard normal variable."""
    m, v = math.log(s0) + (mu - 0.5 * sigma**2) * T, sigma * math.sqrt(T)
    pts = sorted({-40.0, 40.0, *[(math.log(k) - m) / v for k in kinks]})
    f = lambda z: payoff(mp.e ** (m + v * z)) * mp.npdf(z)
    return float(mp.quad(f, pts))


class TestPortfolioInsurance:
    def test_cppi_trivial(self):
        mkt = pi_market()
        spec = StrategySpec("cppi", ALPHA, T, V0, m=4.0)
        assert mk_cppi(spec, mkt, 0) == 1.0
        r, mu = mkt.r, mkt.mu
        expect = ALPHA * V0 + (1 - ALPHA * math.exp(-r * T)) * V0 * math.exp((r + 4 * (mu - r)) * T)
        assert mk_cppi(spec, mkt, 1) == pytest.approx(expect, rel=1e-14)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_cppi_quadrature(self, k):
        mkt = pi_market()
        spec = StrategySpec("cppi", ALPHA, T, V0, m=3.0)
        floor = ALPHA * V0
        c0 = (1 - ALPHA * math.exp(-mkt.r * T)) * V0
        # Cushion is (S/S0)**m times a deterministic factor; match it via its own lognormal law.
        cushion = lambda s: c0 * (s / mkt.s0) ** 3 * mp.e ** ((mkt.r * (1 - 3) + 0.5 * 3 * (1 - 3) * mkt.sigma**2) * T)
        ref = lognormal_quad(lambda s: (floor + cushion(s)) ** k, mkt.mu, mkt.sigma, mkt.s0, T)
        assert mk_cppi(spec, mkt, k) == pytest.approx(ref, rel=1e-10)

    def test_cppi_mc(self):
        mkt = SingleAssetMarket(0.031, 0.223, 0.0, 1.0)
        spec = StrategySpec("cppi", ALPHA, T, 1.0, m=3.0)
        z = np.random.default_rng(11).standard_normal(1_000_000)
        s = np.exp((mkt.mu - 0.5 * mkt.sigma**2) * T + mkt.sigma * math.sqrt(T) * z)
        cushion = (1 - ALPHA) * s**3 * math.exp(0.5 * 3 * (1 - 3) * mkt.sigma**2 * T)
        est = mc_mean((ALPHA + cushion) ** 4, antithetic=False)
        assert abs(est.value - mk_cppi(spec, mkt, 4)) < 3 * est.std_error

    def test_cppi_before_maturity(self):
        mkt = pi_market()
        spec = StrategySpec("cppi", ALPHA, T, V0, m=2.0)
        assert mk_cppi(spec, mkt, 2, t=0.0) == pytest.approx(V0**2, rel=1e-14)
        with pytest.raises(ValidationError):
            mk_cppi(spec, mkt, 2, t=2.0)

    def test_obpi_trivial(self):
        mkt = ratio_market()
        spec = calibrate(StrategySpec("obpi", ALPHA, T, 1.0), mkt)
        assert mk_obpi(spec, mkt, 0) == 1.0
        call = bs_call(0.0, T, ALPHA, mkt.mu, mkt.sigma, spec.p) * math.exp(mkt.mu * T)
        assert mk_obpi(spec, mkt, 1) == pytest.approx(ALPHA + call, rel=1e-13)
        otm = StrategySpec("obpi", ALPHA, T, 1.0, p=1e-6)
        assert mk_obpi(otm, mkt, 3) == pytest.approx(ALPHA**3, rel=1e-14)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 6])
    def test_obpi_quadrature(self, k):
        mkt = ratio_market()
        spec = calibrate(StrategySpec("obpi", ALPHA, T, 1.0), mkt)
        p = spec.p
        ref = lognormal_quad(lambda s: max(mp.mpf(ALPHA), p * s) ** k,
                             mkt.mu, mkt.sigma, 1.0, T, kinks=[ALPHA / p])
        assert mk_obpi(spec, mkt, k) == pytest.approx(ref, rel=1e-8)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_obpi_two_routes(self, k):
        mkt = ratio_market()
        spec = calibrate(StrategySpec("obpi", ALPHA, T, 1.0), mkt)
        assert mk_obpi(spec, mkt, k) == pytest.approx(mk_obpi_from_upm(spec, mkt, k), rel=1e-12)


def cppp_term_by_term(spec, params, k):
    """E[V^k] for CPPP from the joint lognormal of (S1, S2), term by term."""
    a, m, v0 = spec.alpha, spec.m, spec.v0
    sh2 = sigma_hat(params) ** 2
    mean = np.array([params.mu1 - 0.5 * params.sigma1**2, params.mu2 - 0.5 * params.sigma2**2]) * T
    c = params.rho12 * params.sigma1 * params.sigma2
    cov = np.array([[params.sigma1**2, c], [c, params.sigma2**2]]) * T
    total = []
    for i in range(k + 1):
        w = np.array([k - i * m, i * m])
        log_e = w @ mean + 0.5 * w @ cov @ w + i * 0.5 * m * (1 - m) * sh2 * T
        total.append(math.comb(k, i) * a ** (k - i) * (1 - a) ** i * v0**k * math.exp(log_e))
    return math.fsum(total)


class TestPerformanceParticipation:
    @pytest.mark.parametrize("m", [1.0, 3.0, M_STAR_STD, 8.0])
    @pytest.mark.parametrize("k", [1, 2, 4, 8])
    def test_cppp_term_by_term(self, m, k):
        spec = cppp_spec(m)
        assert mk_cppp(spec, market(), k) == pytest.approx(cppp_term_by_term(spec, market(), k), rel=1e-12)

    def test_cppp_mean_closed_form(self):
        p = market()
        for m in (2.0, 5.0):
            spec = cppp_spec(m)
            expect = ALPHA * V0 * math.exp(p.mu1 * T) + (1 - ALPHA) * V0 * math.exp((p.mu1 + m * (p.mu2 - p.mu1)) * T)
            assert mk_cppp(spec, p, 1) == pytest.approx(expect, rel=1e-14)
            assert expected_cppp(spec, p) == pytest.approx(expect, rel=1e-14)

    def test_obpp_mean_closed_form(self):
        o = obpp_spec()
        assert mk_obpp(o, market(), 1) == pytest.approx(expected_obpp(o, market()), rel=1e-13)
        assert mk_obpp(o, market(), 1) / V0 - 1 == pytest.approx(0.0810, abs=2e-4)

    def test_cppp_at_m_star_mean_return(self):
        assert mk_cppp(cppp_spec(M_STAR_STD), market(), 1) / V0 - 1 == pytest.approx(0.0810, abs=2e-4)

    def test_obpp_2d_quadrature(self):
        p, o = market(), obpp_spec()
        s1v, s2v, rho = p.sigma1, p.sigma2, p.rho12
        a1, a2 = (p.mu1 - 0.5 * s1v**2) * T, (p.mu2 - 0.5 * s2v**2) * T
        rt, rc = math.sqrt(T), math.sqrt(1 - rho * rho)
        phi = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

        def inner(z1):
            s1 = V0 * math.exp(a1 + s1v * rt * z1)
            b = a2 + s2v * rt * rho * z1
            # Kink: p*S2 = alpha*S1.
            zk = (math.log(ALPHA * s1 / (o.p * V0)) - b) / (s2v * rt * rc)
            g = lambda z2: max(ALPHA * s1, o.p * V0 * math.exp(b + s2v * rt * rc * z2)) ** 2 * phi(z2)
            lo = integrate.quad(g, -12, zk, epsabs=0, epsrel=1e-12, limit=200)[0]
            hi = integrate.quad(g, zk, max(zk, 0) + 14, epsabs=0, epsrel=1e-12, limit=200)[0]
            return (lo + hi) * phi(z1)

        ref = integrate.quad(inner, -12, 12, epsabs=0, epsrel=1e-11, limit=200)[0]
        assert mk_obpp(o, p, 2) == pytest.approx(ref, rel=1e-8)

    @pytest.mark.parametrize("k", range(1, 9))
    def test_factorization(self, k):
        p = market()
        c = cppp_spec(5.0)
        assert mk_cppp(c, p, k) == pytest.approx(factorized_moment(c, p, k), rel=1e-12)
        if k <= 4:
            o = obpp_spec()
            assert mk_obpp(o, p, k) == pytest.approx(factorized_moment(o, p, k), rel=1e-12)

    def test_factorization_before_maturity(self):
        p, c = market(), cppp_spec(4.0)
        assert mk_cppp(c, p, 3, t=0.4) == pytest.approx(factorized_moment(c, p, 3, t=0.4), rel=1e-12)
        with pytest.raises(ValidationError):
            factorized_moment(obpp_spec(), p, 2, t=0.5)

    def test_standard_start_required(self):
        spec = StrategySpec("cppp", ALPHA, T, V0, m=3.0, s1_0=50.0)
        with pytest.raises(ValidationError):
            mk_cppp(spec, market(), 2)

    def test_order_cap(self):
        with pytest.raises(ValidationError):
            mk_cppp(cppp_spec(3), market(), 9)
        with pytest.raises(ValidationError):
            mk_obpp(obpp_spec(), market(), -1)

    def test_overflow(self):
        with pytest.raises(MomentOverflowError):
            mk_cppp(StrategySpec("cppp", ALPHA, T, 1e300, m=3.0), market(), 2)
        with pytest.raises(MomentOverflowError):
            mk_cppp(cppp_spec(8.0), MarketParams(0.05, 0.9, 0.3, 2.0, -0.9), 8)

    def test_degenerate_ratio(self):
        p = MarketParams(0.03, 0.05, 0.0, 0.0, 0.0, r=0.03, degenerate=True)
        o = StrategySpec("obpp", ALPHA, T, V0, p=0.5)
        with pytest.raises(DegenerateInputError):
            mk_obpp(o, p, 2)


class TestMeasureShift:
    def test_trivial_orders(self):
        p = market()
        s0 = measure_shift(p, V0, 0, T)
        assert s0.expected_s1_pow_k == 1.0
        assert s0.shifted_ratio.mu_hat_tilde_k == pytest.approx(s0.shifted_ratio.mu_hat)
        s1 = measure_shift(p, V0, 1, T)
        assert s1.shifted_ratio.mu_hat_tilde_k == pytest.approx(p.mu2 - p.mu1, abs=1e-15)

    def test_k2_weighted_mc(self):
        p = market()
        b = sample_paths(p, V0, V0, T, n_paths=400_000, seed=5)
        w = radon_nikodym_weights(b, p, 2)
        shift = measure_shift(p, V0, 2, T)
        est = mc_mean(b.s1**2)
        assert abs(est.value - shift.expected_s1_pow_k) < 4 * est.std_error
        lr = np.log(b.s2 / b.s1)
        drift = mc_mean(w * lr)
        sr = shift.shifted_ratio
        assert abs(drift.value - (sr.mu_hat_tilde_k - 0.5 * sr.sigma_hat**2) * T) < 4 * drift.std_error


class TestMStar:
    def test_standard_value(self):
        assert m_star(obpp_spec(), market()) == pytest.approx(6.90, abs=0.01)
        assert m_star(obpp_spec(), market()) == pytest.approx(M_STAR_STD, rel=1e-10)

    def test_equal_expectation(self):
        p, o = market(), obpp_spec()
        c = cppp_spec(m_star(o, p))
        assert abs(expected_cppp(c, p) - expected_obpp(o, p)) < 1e-10 * V0

    def test_vanishing_excess_drift(self):
        base = market()
        o = obpp_spec(base)
        sh = sigma_hat(base)
        c0 = bs_call(0.0, T, ALPHA, 0.0, sh, o.p)
        d2 = (math.log(o.p / ALPHA) - 0.5 * sh * sh * T) / (sh * math.sqrt(T))
        limit = 1 + ALPHA * float(mp.ncdf(d2)) / c0
        values = []
        for gap in (1e-1, 1e-2, 1e-4, 1e-7):
            p = MarketParams(base.mu1, base.mu1 + gap, base.sigma1, base.sigma2, base.rho12)
            values.append(m_star(o, p))
        assert all(v > 1 for v in values)
        assert values[-1] == pytest.approx(limit, rel=1e-5)
        with pytest.raises(DegenerateInputError, match="mu2 - mu1"):
            m_star(o, MarketParams(0.07, 0.07, base.sigma1, base.sigma2, base.rho12))

    def test_increasing_in_alpha(self):
        p = market()
        alphas = np.linspace(0.80, 0.99, 20)
        ms = [m_star(obpp_spec(p, alpha=a), p) for a in alphas]
        assert all(x < y for x, y in zip(ms, ms[1:]))

    def test_needs_obpp(self):
        with pytest.raises(ValidationError):
            m_star(cppp_spec(3), market())


class TestCentralMoments:
    def test_identities(self):
        mv = strategy_moments(cppp_spec(3), market(), 4, dimension="value")
        assert mv.central_moment(1) == 0.0
        assert mv.central_moment(2) == pytest.approx(mv.raw[1] - mv.raw[0] ** 2, rel=1e-12)
        assert mv.skewness == pytest.approx(mv.central[1] / mv.central[0] ** 1.5)
        assert mv.excess_kurtosis == pytest.approx(mv.kurtosis - 3)

    def test_return_dimension_is_affine(self):
        mv = strategy_moments(obpp_spec(), market(), 4, dimension="value")
        rv = mv.as_return()
        assert rv.mean == pytest.approx(mv.mean / V0 - 1, rel=1e-14)
        assert rv.std == pytest.approx(mv.std / V0, rel=1e-14)
        assert (rv.skewness, rv.kurtosis) == (mv.skewness, mv.kurtosis)

    def test_normal_moments(self):
        mu, s = 2.0, 0.5
        raw = [mu, mu**2 + s**2, mu**3 + 3 * mu * s**2, mu**4 + 6 * mu**2 * s**2 + 3 * s**4]
        mv = central_moments(raw)
        assert mv.std == pytest.approx(s, rel=1e-13)
        assert mv.skewness == pytest.approx(0.0, abs=1e-12)
        assert mv.kurtosis == pytest.approx(3.0, rel=1e-12)

    def test_deterministic_payoff(self):
        c = 104.2
        mv = central_moments([c, c**2, c**3, c**4])
        assert mv.degenerate and mv.central == (0.0, 0.0, 0.0) and mv.std == 0.0
        assert math.isnan(mv.skewness)
        flat = MarketParams(0.03, 0.05, 0.0, 0.0, 0.0, r=0.03, degenerate=True)
        assert strategy_moments(cppp_spec(3), flat, 4).degenerate

    def test_cancellation(self):
        with pytest.raises(CancellationError) as info:
            central_moments([1.0, 0.5, 1.0])
        assert info.value.k == 2
        with pytest.raises(CancellationError) as info:
            central_moments([1.0, 2.0, 1.0, -10.0])
        assert info.value.k == 4
        with pytest.raises(ValidationError):
            central_moments([1.0])

    def test_means_decrease_in_alpha(self):
        p = market()
        alphas = np.linspace(0.5, 0.99, 15)
        for means in (
            [expected_obpp(obpp_spec(p, alpha=a), p) for a in alphas],
            [expected_cppp(StrategySpec("cppp", a, T, V0, m=4.0), p) for a in alphas],
        ):
            assert all(x > y for x, y in zip(means, means[1:]))

    def test_cppp_mean_ignores_covariance(self):
        base = market()
        c = cppp_spec(5.0)
        ref = mk_cppp(c, base, 1)
        for s1, s2, rho in ((0.01, 0.3, 0.5), (0.2, 0.25, -0.9), (0.05, 0.05, 0.0)):
            alt = MarketParams(base.mu1, base.mu2, s1, s2, rho)
            assert mk_cppp(c, alt, 1) == pytest.approx(ref, rel=1e-12)

    def test_cancellation_warning(self):
        from perfpart.moments import CancellationWarning, _sum_signed_logs

        with pytest.warns(CancellationWarning):
            _sum_signed_logs([(1, 0.0), (-1, math.log(1 - 1e-12))], "probe")
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            _sum_signed_logs([(1, 0.0), (1, 1.0)], "probe")


def test_heavy_tail_moments_by_importance_sampling():
    """Tilted-mixture MC resolves every column that plain sampling cannot."""
    p = market()
    pim = pi_market()
    cases = list(moment_table_specs(p).values())
    cases = [(s, p) for s in cases]
    cases += [(calibrate(StrategySpec("obpi", ALPHA, T, V0), pim), pim),
              (StrategySpec("cppi", ALPHA, T, V0, m=4.0), pim)]
    closed = {"obpp": mk_obpp, "cppp": mk_cppp, "obpi": mk_obpi, "cppi": mk_cppi}
    for spec, mkt in cases:
        for k in range(1, 5):
            est = estimate_raw_moment_tilted(spec, mkt, k, n_paths=400_000, seed=17 + k)
            z = (est.value - closed[spec.kind](spec, mkt, k)) / est.std_error
            assert abs(z) < 3.5, (spec.kind, spec.m, k, z)
