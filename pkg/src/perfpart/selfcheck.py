"""Invariant suite behind ``perfpart run --self-check``.

Each check exercises one structural identity on randomized states of the
given market and returns a :class:`CheckResult`. Sizes are modest so the
suite finishes in seconds; the test suite runs the same identities at full
size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .greeks import compute_greeks, finite_difference_greeks, relative_error
from .market import MarketParams, MarketState, SingleAssetMarket, discounted_market, sigma_hat
from .moments import expected_cppp, expected_obpp, factorized_moment, m_star, mk_cppp, mk_obpp
from .pricing import bs_call, margrabe
from .simulation import estimate_raw_moment_tilted, sample_paths
from .strategies import StrategySpec, calibrate, cppi_value, cppp_value, obpi_value, obpp_value

EXCHANGE_D1_BAND = 6.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def rel_err(a, b, floor: float = 0.0):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(a == b, 0.0, np.abs(a - b) / scale)
    return out


def discounted_pi(spec: StrategySpec, params: MarketParams):
    """The PI strategy and market that a PP strategy becomes in ``S1`` units."""
    ratio0 = spec.s2_start / spec.s1_start
    market = SingleAssetMarket(mu=discounted_market(params).mu, sigma=sigma_hat(params), r=0.0, s0=ratio0)
    v0_hat = spec.v0 / spec.s1_start
    kind = "obpi" if spec.kind == "obpp" else "cppi"
    # The floor alpha*S1 is alpha units of the numeraire: alpha_pi * v0_hat = alpha.
    alpha_pi = spec.alpha / v0_hat
    return StrategySpec(kind, alpha_pi, spec.T, v0_hat, m=spec.m, p=spec.p), market


def _states(rng, n, T):
    t = rng.uniform(0.0, T, n)
    s1 = 100.0 * np.exp(rng.normal(0.0, 0.2, n))
    s2 = s1 * np.exp(rng.normal(0.0, 0.4, n))
    return t, s1, s2


def check_numeraire(params, obpp, cppp, rng, n=500) -> CheckResult:
    t, s1, s2 = _states(rng, n, obpp.T)
    worst = 0.0
    for spec, pp_fn, pi_fn in ((obpp, obpp_value, obpi_value), (cppp, cppp_value, cppi_value)):
        pi_spec, pi_mkt = discounted_pi(spec, params)
        lhs = pp_fn(spec, params, t, s1, s2)
        rhs = s1 * pi_fn(pi_spec, pi_mkt, t, s2 / s1)
        worst = max(worst, float(rel_err(lhs, rhs).max()))
    return CheckResult("numeraire reduction", worst < 1e-12, f"max rel err {worst:.2e}")


def check_exchange_parity(params, rng, n=500) -> CheckResult:
    a, b = rng.uniform(0.1, 2.0, n), rng.uniform(0.1, 2.0, n)
    t, s1, s2 = _states(rng, n, 1.0)
    sh = sigma_hat(params)
    call, _, _ = margrabe(b * s2, a * s1, sh, 1.0 - t)
    put, _, _ = margrabe(a * s1, b * s2, sh, 1.0 - t)
    # Relative to the larger leg: the difference itself can be arbitrarily small.
    scale = np.maximum(a * s1, b * s2)
    worst = float((np.abs((call - put) - (b * s2 - a * s1)) / scale).max())
    return CheckResult("exchange parity", worst < 1e-12, f"max err / leg value {worst:.2e}")


def check_exchange_call(params, obpp, rng, n=500) -> CheckResult:
    t, s1, s2 = _states(rng, n, obpp.T)
    p, a = obpp.p, obpp.alpha
    ex, d1, _ = margrabe(p * s2, a * s1, sigma_hat(params), obpp.T - t)
    call = bs_call(t, obpp.T, a, 0.0, sigma_hat(params), p * s2 / s1)
    # Beyond |d1| = 6 the value is so sensitive to its inputs that two
    # correct routes differ by more than 1e-12 from input rounding alone.
    band = np.abs(d1) <= EXCHANGE_D1_BAND
    worst = float(rel_err(ex / s1, call)[band].max())
    return CheckResult("exchange = S1 x call", worst < 1e-12, f"max rel err {worst:.2e}")


def check_factorization(params, obpp, cppp) -> CheckResult:
    worst = 0.0
    for k in range(1, 9):
        worst = max(worst, float(rel_err(mk_cppp(cppp, params, k), factorized_moment(cppp, params, k))))
    for k in range(1, 5):
        worst = max(worst, float(rel_err(mk_obpp(obpp, params, k), factorized_moment(obpp, params, k))))
    return CheckResult("moment factorization", worst < 1e-12, f"max rel err {worst:.2e}")


def check_m_star(params, obpp) -> CheckResult:
    ms = m_star(obpp, params)
    c = StrategySpec("cppp", obpp.alpha, obpp.T, obpp.v0, m=ms)
    gap = abs(expected_cppp(c, params) - expected_obpp(obpp, params)) / obpp.v0
    return CheckResult("equal-expectation multiplier", ms > 1 and gap < 1e-10, f"m*={ms:.6f}, gap {gap:.1e} v0")


def check_cppp_mean_invariance(params, cppp) -> CheckResult:
    base = expected_cppp(cppp, params)
    worst = 0.0
    for d_rho in (-0.3, 0.3):
        for f1, f2 in ((1.0, 1.0), (0.5, 1.2)):
            rho = min(max(params.rho12 + d_rho, -0.99), 0.99)
            s1 = params.sigma1 * f1
            s2 = max(params.sigma2 * f2, s1)
            alt = MarketParams(params.mu1, params.mu2, s1, s2, rho, params.r)
            worst = max(worst, float(rel_err(expected_cppp(cppp, alt), base)))
    return CheckResult("CPPP mean ignores covariance", worst < 1e-12, f"max rel err {worst:.2e}")


def check_greeks(params, obpp, rng, n=100) -> CheckResult:
    vs_max = 3.0
    worst = 0.0
    for _ in range(n):
        t = rng.uniform(0.0, obpp.T - 0.01)
        s1 = 100.0 * math.exp(rng.normal(0.0, 0.2))
        vs = sigma_hat(params) * math.sqrt(obpp.T - t)
        r_obpp = obpp.alpha / obpp.p * math.exp(rng.uniform(-vs_max, vs_max) * vs)
        # CPPP ratios stay where the cushion is well above the roundoff of the value.
        r_cppp = math.exp(rng.uniform(-1.0, 1.0))
        cppp = StrategySpec("cppp", obpp.alpha, obpp.T, obpp.v0, m=rng.uniform(1.5, 8.0))
        for spec, ratio in ((obpp, r_obpp), (cppp, r_cppp)):
            state = MarketState(t, s1, s1 * ratio)
            err = relative_error(finite_difference_greeks(spec, params, state), compute_greeks(spec, params, state))
            worst = max(worst, max(err.as_tuple()))
    return CheckResult("Greeks vs finite differences", worst < 1e-6, f"max rel err {worst:.2e}")


def check_mc(params, obpp, cppp, seed, n_paths=200_000) -> CheckResult:
    worst = 0.0
    for spec, fn in ((obpp, mk_obpp), (cppp, mk_cppp)):
        for k in range(1, 5):
            est = estimate_raw_moment_tilted(spec, params, k, n_paths=n_paths, seed=seed)
            worst = max(worst, abs(est.value - fn(spec, params, k)) / est.std_error)
    return CheckResult("closed forms vs Monte Carlo", worst < 4.0, f"max |z| {worst:.2f}")


def check_determinism(params, seed) -> CheckResult:
    a = sample_paths(params, 100.0, 100.0, 1.0, n_paths=100_000, seed=seed, threads=1)
    b = sample_paths(params, 100.0, 100.0, 1.0, n_paths=100_000, seed=seed, threads=4)
    same = np.array_equal(a.s1, b.s1) and np.array_equal(a.s2, b.s2)
    return CheckResult("thread-count determinism", same, "bit-identical" if same else "paths differ")


def run_checks(params: MarketParams, alpha: float, T: float, v0: float, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    obpp = calibrate(StrategySpec("obpp", alpha, T, v0), params)
    cppp = StrategySpec("cppp", alpha, T, v0, m=m_star(obpp, params))
    return [
        check_numeraire(params, obpp, cppp, rng),
        check_exchange_parity(params, rng),
        check_exchange_call(params, obpp, rng),
        check_factorization(params, obpp, cppp),
        check_m_star(params, obpp),
        check_cppp_mean_invariance(params, cppp),
        check_greeks(params, obpp, rng),
        check_mc(params, obpp, cppp, seed),
        check_determinism(params, seed),
    ]
