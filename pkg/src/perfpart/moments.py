"""Closed-form raw moments of OBPI/CPPI/OBPP/CPPP payoffs and derived statistics.

The PP moments factor through a change of measure: with
``dP~_k/dP = S1(t)**k / E[S1(t)**k]``,

    E[V_PP(t)**k] = E[S1(t)**k] * E~_k[V_PI(t)**k],

where ``V_PI`` is the discounted strategy on ``S2/S1`` whose drift under
``P~_k`` is ``ratio_params(params, k).mu_hat_tilde_k``. :func:`mk_cppp` and
:func:`mk_obpp` evaluate their own closed forms; :func:`factorized_moment` builds
the same numbers from the PI formulas so the two routes can be compared.

Every sum is accumulated in log space term by term and summed with
``math.fsum``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

from scipy import special

from .errors import CancellationError, DegenerateInputError, MomentOverflowError, ValidationError
from .market import (
    LOG_MAX,
    MarketParams,
    RatioParams,
    SingleAssetMarket,
    discounted_market,
    expected_power_s1,
    log_expected_power_s1,
    ratio_params,
    sigma_hat,
)
from .pricing import bs_call, log_power_option_expectation, upper_partial_moment
from .strategies import StrategySpec

DEFAULT_ORDER = 4
MAX_ORDER = 8
CANCELLATION_RTOL = 1e-10
# Central moments below this fraction of their largest binomial term are noise.
CENTRAL_ZERO_RTOL = 1e-12
# Convention of reference kurtosis figures matched by the MC check in the
# acceptance suite: mu4/mu2**2 - 3.
REPORTED_KURTOSIS = "excess"


class CancellationWarning(RuntimeWarning):
    pass


def _check_order(k: int, lo: int = 0):
    if not isinstance(k, int) or k < lo:
        raise ValidationError(f"moment order must be an integer >= {lo}, got {k!r}")
    if k > MAX_ORDER:
        raise ValidationError(
            f"moment order {k} exceeds the cap {MAX_ORDER}; alternating binomial sums lose "
            "all precision beyond it"
        )


def _sum_signed_logs(terms: Sequence[tuple[int, float]], what: str) -> float:
    """Sum ``sign * exp(log_abs)`` terms accurately, guarding overflow and cancellation."""
    live = [(s, la) for s, la in terms if s != 0 and la != -math.inf]
    if not live:
        return 0.0
    top = max(la for _, la in live)
    if top > LOG_MAX:
        raise MomentOverflowError(f"{what}: a term overflows (log {top:.6g})")
    vals = [s * math.exp(la) for s, la in live]
    total = math.fsum(vals)
    largest = max(abs(v) for v in vals)
    if abs(total) < CANCELLATION_RTOL * largest:
        warnings.warn(
            f"{what}: result {total:.3e} is below {CANCELLATION_RTOL:g} x largest term "
            f"{largest:.3e}; digits lost to cancellation",
            CancellationWarning,
            stacklevel=3,
        )
    return total


def _log_comb(n: int, k: int) -> float:
    return math.log(math.comb(n, k))


def _time(spec: StrategySpec, t: float | None) -> float:
    t = spec.T if t is None else t
    if not 0 <= t <= spec.T:
        raise ValidationError(f"t must lie in [0, T={spec.T}], got {t}")
    return t


def _require_standard_start(spec: StrategySpec):
    if not spec.standard_start:
        raise ValidationError("PP moment formulas assume S1(0) = S2(0) = v0")


# --- single-asset portfolio insurance ---------------------------------------


def mk_cppi(spec: StrategySpec, market: SingleAssetMarket, k: int, t: float | None = None) -> float:
    """k-th raw moment of a CPPI portfolio value at ``t`` (default ``T``).

    Uses the binomial expansion over the deterministic floor and the
    lognormal cushion with drift ``r + m(mu - r)`` and volatility
    ``m*sigma``.
    """
    _check_order(k)
    t = _time(spec, t)
    if k == 0:
        return 1.0
    a, v0, m, r, T = spec.alpha, spec.v0, spec.m, market.r, spec.T
    mu, sig = market.mu, market.sigma
    disc = math.exp(-r * T)
    c_frac = 1 - a * disc
    log_ratio = (math.log(c_frac) if c_frac > 0 else -math.inf) - math.log(a) + r * T
    base = k * (math.log(a * v0) - r * (T - t))
    terms = []
    for i in range(k + 1):
        growth = i * m * (mu - r + 0.5 * (i - 1) * m * sig * sig) * t
        lr = i * log_ratio if i else 0.0
        terms.append((1, base + _log_comb(k, i) + lr + growth))
    return _sum_signed_logs(terms, f"CPPI moment k={k}")


def mk_obpi(spec: StrategySpec, market: SingleAssetMarket, k: int) -> float:
    """k-th raw moment of the OBPI payoff ``max(alpha*v0, p*S(T))``.

    Expands ``(alpha*v0 + (p*S - alpha*v0)^+)**k`` into upper partial
    moments and those into power-option expectations; the double sum is
    accumulated as one flat compensated sum.
    """
    _check_order(k)
    if k == 0:
        return 1.0
    p = spec.require_p()
    K = spec.alpha * spec.v0
    if p == 0:
        return K**k
    terms = [(1, k * math.log(K))]
    for i in range(1, k + 1):
        for l in range(i + 1):
            lpo = log_power_option_expectation(p, market.s0, K, l, spec.T, market.mu, market.sigma)
            terms.append(
                ((-1) ** (i - l), _log_comb(k, i) + _log_comb(i, l) + (k - l) * math.log(K) + lpo)
            )
    return _sum_signed_logs(terms, f"OBPI moment k={k}")


def mk_obpi_from_upm(spec: StrategySpec, market: SingleAssetMarket, k: int) -> float:
    """Same as :func:`mk_obpi` but summed over :func:`upper_partial_moment` values."""
    _check_order(k)
    if k == 0:
        return 1.0
    p = spec.require_p()
    K = spec.alpha * spec.v0
    parts = [K**k]
    for i in range(1, k + 1):
        upm = upper_partial_moment(i, p, market.s0, K, spec.T, market.mu, market.sigma)
        parts.append(math.comb(k, i) * K ** (k - i) * upm)
    return math.fsum(parts)


# --- change of measure --------------------------------------------------------


@dataclass(frozen=True)
class MeasureShift:
    """``E_P[S1(t)**k]`` and the index-ratio dynamics under ``P~_k``."""

    k: int
    expected_s1_pow_k: float
    shifted_ratio: RatioParams


def measure_shift(params: MarketParams, s1_0: float, k: int, t: float) -> MeasureShift:
    return MeasureShift(k, expected_power_s1(params, s1_0, k, t), ratio_params(params, k))


def factorized_moment(spec: StrategySpec, params: MarketParams, k: int, t: float | None = None) -> float:
    """PP moment as ``E[S1**k]`` times the PI moment in the shifted discounted market."""
    _require_standard_start(spec)
    t = _time(spec, t)
    shift = measure_shift(params, spec.v0, k, t)
    mkt = discounted_market(params, k)
    if spec.kind == "cppp":
        pi = StrategySpec("cppi", spec.alpha, spec.T, 1.0, m=spec.m)
        return shift.expected_s1_pow_k * mk_cppi(pi, mkt, k, t)
    if spec.kind == "obpp":
        if t != spec.T:
            raise ValidationError("OBPP moments are available at maturity only")
        pi = StrategySpec("obpi", spec.alpha, spec.T, 1.0, p=spec.require_p())
        return shift.expected_s1_pow_k * mk_obpi(pi, mkt, k)
    raise ValidationError(f"factorized_moment applies to OBPP/CPPP, got {spec.kind}")


# --- performance participation ------------------------------------------------


def mk_cppp(spec: StrategySpec, params: MarketParams, k: int, t: float | None = None) -> float:
    """k-th raw moment of the CPPP value at ``t`` (default ``T``)."""
    _check_order(k)
    _require_standard_start(spec)
    t = _time(spec, t)
    if k == 0:
        return 1.0
    a, m = spec.alpha, spec.m
    mu_k = ratio_params(params, k).mu_hat_tilde_k
    sh = sigma_hat(params)
    base = k * math.log(a) + log_expected_power_s1(params, spec.v0, k, t)
    log_odds = math.log((1 - a) / a)
    terms = [
        (1, base + _log_comb(k, i) + i * log_odds + i * m * (mu_k + 0.5 * (i - 1) * m * sh * sh) * t)
        for i in range(k + 1)
    ]
    return _sum_signed_logs(terms, f"CPPP moment k={k}")


def _d_hat(p, a, mu_k, sh, l, T):
    return (math.log(p / a) + (mu_k + (l - 0.5) * sh * sh) * T) / (sh * math.sqrt(T))


def mk_obpp(spec: StrategySpec, params: MarketParams, k: int) -> float:
    """k-th raw moment of the OBPP payoff ``max(alpha*S1(T), p*S2(T))``."""
    _check_order(k)
    _require_standard_start(spec)
    if k == 0:
        return 1.0
    a, p, T = spec.alpha, spec.require_p(), spec.T
    rp = ratio_params(params, k)
    mu_k, sh = rp.mu_hat_tilde_k, rp.sigma_hat
    if sh == 0:
        raise DegenerateInputError("OBPP moments need a non-degenerate index-ratio volatility")
    base = k * math.log(a) + log_expected_power_s1(params, spec.v0, k, T)
    terms = [(1, base)]
    for i in range(1, k + 1):
        for l in range(i + 1):
            log_phi = float(special.log_ndtr(_d_hat(p, a, mu_k, sh, l, T)))
            la = (
                base
                + _log_comb(k, i)
                + _log_comb(i, l)
                + l * math.log(p / a)
                + l * (mu_k + 0.5 * (l - 1) * sh * sh) * T
                + log_phi
            )
            terms.append(((-1) ** (i - l), la))
    return _sum_signed_logs(terms, f"OBPP moment k={k}")


def expected_cppp(spec: StrategySpec, params: MarketParams) -> float:
    """``E[V_CPPP(T)]``; depends on the drifts only, not on the covariance."""
    a, v0, T, m = spec.alpha, spec.v0, spec.T, spec.m
    return a * v0 * math.exp(params.mu1 * T) + (1 - a) * v0 * math.exp(
        (params.mu1 + m * (params.mu2 - params.mu1)) * T
    )


def expected_obpp(spec: StrategySpec, params: MarketParams) -> float:
    """``E[V_OBPP(T)]`` as floor-weighted and ``S2``-weighted exercise probabilities."""
    a, v0, T, p = spec.alpha, spec.v0, spec.T, spec.require_p()
    rp = ratio_params(params, 1)
    d0 = _d_hat(p, a, rp.mu_hat_tilde_k, rp.sigma_hat, 0, T)
    d1 = _d_hat(p, a, rp.mu_hat_tilde_k, rp.sigma_hat, 1, T)
    return a * v0 * math.exp(params.mu1 * T) * float(special.ndtr(-d0)) + p * v0 * math.exp(
        params.mu2 * T
    ) * float(special.ndtr(d1))


def m_star(spec: StrategySpec, params: MarketParams) -> float:
    """CPPP multiplier whose expected payoff equals that of the OBPP ``spec``.

    ``1 + ln(Call(mu2 - mu1) / Call(0)) / ((mu2 - mu1) T)`` where both calls
    are on ``p`` units of the index ratio with strike ``alpha`` and the
    ratio volatility, priced with the stated rate.

    Raises:
        DegenerateInputError: ``mu2 == mu1``, where the formula divides by 0.
    """
    _require_standard_start(spec)
    if spec.kind != "obpp":
        raise ValidationError("m_star needs a calibrated OBPP spec")
    excess = params.mu2 - params.mu1
    if excess <= 0:
        raise DegenerateInputError(
            "m_star divides by (mu2 - mu1) * T, which vanishes for mu2 == mu1"
        )
    a, T, p = spec.alpha, spec.T, spec.require_p()
    sh = sigma_hat(params)
    c_drift = bs_call(0.0, T, a, excess, sh, p)
    c_zero = bs_call(0.0, T, a, 0.0, sh, p)
    return 1.0 + math.log(c_drift / c_zero) / (excess * T)


# --- central moments ----------------------------------------------------------


@dataclass(frozen=True)
class MomentVector:
    """Raw and central moments of a payoff plus summary statistics.

    ``raw[j]`` is ``m_{j+1}`` and ``central[j]`` is ``mu_{j+2}``, both in
    currency units. ``mean`` and ``std`` follow ``dimension``: portfolio value,
    or return ``V/v0 - 1``. ``kurtosis`` is the plain standardized fourth
    moment ``mu4/mu2**2``; ``excess_kurtosis`` subtracts 3.
    """

    raw: tuple[float, ...]
    central: tuple[float, ...]
    mean: float
    std: float
    skewness: float
    kurtosis: float
    dimension: Literal["value", "return"] = "value"
    v0: float | None = None
    degenerate: bool = False
    std_errors: dict[str, float] = field(default_factory=dict)

    @property
    def excess_kurtosis(self) -> float:
        return self.kurtosis - 3.0

    @property
    def order(self) -> int:
        return len(self.raw)

    def raw_moment(self, k: int) -> float:
        return 1.0 if k == 0 else self.raw[k - 1]

    def central_moment(self, k: int) -> float:
        if k == 0:
            return 1.0
        if k == 1:
            return 0.0
        return self.central[k - 2]

    def as_return(self, v0: float | None = None) -> MomentVector:
        return central_moments(self.raw, v0=v0 or self.v0, dimension="return", std_errors=self.std_errors)


def central_moments(
    raw: MomentVector | Sequence[float],
    v0: float | None = None,
    dimension: Literal["value", "return"] = "value",
    std_errors: dict[str, float] | None = None,
) -> MomentVector:
    """Central moments and summary statistics from raw moments ``m_1..m_K``.

    ``dimension="return"`` reports ``mean = m1/v0 - 1`` and
    ``std = sqrt(mu2)/v0``; skewness and kurtosis are affine invariant.

    Raises:
        CancellationError: an even central moment is negative beyond
            rounding, naming the offending order.
    """
    if isinstance(raw, MomentVector):
        v0 = v0 or raw.v0
        std_errors = raw.std_errors if std_errors is None else std_errors
        raw = raw.raw
    raw = tuple(float(x) for x in raw)
    K = len(raw)
    if K < 2:
        raise ValidationError("central moments need at least m_1 and m_2")
    m = (1.0,) + raw
    m1 = m[1]
    central = []
    for k in range(2, K + 1):
        parts = [math.comb(k, i) * (-1) ** (k - i) * m[i] * m1 ** (k - i) for i in range(k + 1)]
        mu_k = math.fsum(parts)
        scale = max(abs(x) for x in parts)
        if abs(mu_k) <= CENTRAL_ZERO_RTOL * scale:
            mu_k = 0.0
        elif k % 2 == 0 and mu_k < 0:
            raise CancellationError(
                f"central moment mu_{k} = {mu_k:.3e} < 0: raw moments are inconsistent or "
                "lost precision",
                k=k,
            )
        central.append(mu_k)
    mu2 = central[0]
    degenerate = mu2 == 0.0
    skew = central[1] / mu2**1.5 if K >= 3 and not degenerate else math.nan
    kurt = central[2] / mu2**2 if K >= 4 and not degenerate else math.nan
    if dimension == "return":
        if not v0:
            raise ValidationError("return dimension needs v0")
        mean, std = m1 / v0 - 1.0, math.sqrt(mu2) / v0
    elif dimension == "value":
        mean, std = m1, math.sqrt(mu2)
    else:
        raise ValidationError(f"unknown dimension {dimension!r}")
    return MomentVector(
        raw=raw,
        central=tuple(central),
        mean=mean,
        std=std,
        skewness=skew,
        kurtosis=kurt,
        dimension=dimension,
        v0=v0,
        degenerate=degenerate,
        std_errors=dict(std_errors or {}),
    )


def strategy_moments(
    spec: StrategySpec,
    market: MarketParams | SingleAssetMarket,
    K: int = DEFAULT_ORDER,
    dimension: Literal["value", "return"] = "return",
) -> MomentVector:
    """Closed-form ``MomentVector`` of the terminal payoff of any strategy."""
    _check_order(K, lo=2)
    fn = {"obpp": mk_obpp, "cppp": mk_cppp, "obpi": mk_obpi, "cppi": mk_cppi}[spec.kind]
    raw = [fn(spec, market, k) for k in range(1, K + 1)]
    return central_moments(raw, v0=spec.v0, dimension=dimension)


__all__ = [
    "REPORTED_KURTOSIS",
    "CancellationWarning",
    "MeasureShift",
    "MomentVector",
    "central_moments",
    "expected_cppp",
    "expected_obpp",
    "factorized_moment",
    "m_star",
    "measure_shift",
    "mk_cppi",
    "mk_cppp",
    "mk_obpi",
    "mk_obpi_from_upm",
    "mk_obpp",
    "strategy_moments",
]
