"""OBPP/CPPP strategies and their single-asset counterparts OBPI/CPPI.

Performance participation (PP) strategies guarantee ``alpha * S1(t)``, a
fraction of the reserve asset, and participate in the outperformance of the
active asset ``S2``:

* OBPP holds ``alpha`` shares of ``S1`` plus an option to exchange them for
  ``p`` shares of ``S2``; ``p`` is calibrated so the set-up costs ``v0``.
* CPPP keeps ``m`` times the cushion ``V - alpha * S1`` in ``S2``.

Portfolio insurance (PI) strategies are the same constructions on one risky
asset and a cash account. Discounting a PP strategy by ``S1`` gives the PI
strategy on ``S2 / S1`` with zero rate, unit initial wealth and the same
``alpha``, ``m`` and ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Literal

import numpy as np
from scipy import special

from .errors import CalibrationError, ValidationError
from .market import (
    AssetState,
    MarketParams,
    MarketState,
    SingleAssetMarket,
    sigma_hat,
)
from .pricing import bs_call, margrabe

Kind = Literal["obpp", "cppp", "obpi", "cppi"]
PP_KINDS = ("obpp", "cppp")
OPTION_KINDS = ("obpp", "obpi")

P_BRACKET_EPS = 1e-12
P_XTOL = 1e-12
RESIDUAL_RTOL = 1e-10
MAX_ITER = 200


@dataclass(frozen=True)
class StrategySpec:
    """Parameters of one strategy.

    ``m`` applies to CPPP/CPPI only. ``p`` applies to OBPP/OBPI and is set by
    :func:`calibrate`, never chosen freely. ``s1_0``/``s2_0`` are the initial
    asset prices of a PP strategy and default to ``v0``. For PI strategies
    ``alpha`` is the insurance level relative to ``v0`` and may reach
    ``exp(r*T)``.
    """

    kind: Kind
    alpha: float
    T: float
    v0: float
    m: float | None = None
    p: float | None = None
    s1_0: float | None = None
    s2_0: float | None = None

    def __post_init__(self):
        if self.kind not in ("obpp", "cppp", "obpi", "cppi"):
            raise ValidationError(f"unknown strategy kind {self.kind!r}")
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")
        if self.kind in PP_KINDS and not self.alpha < 1:
            raise ValidationError(
                f"performance participation needs alpha < 1, got {self.alpha}"
            )
        if not (self.T > 0 and self.v0 > 0):
            raise ValidationError(f"need T > 0 and v0 > 0, got T={self.T}, v0={self.v0}")
        if self.kind in ("cppp", "cppi"):
            if self.m is None or not self.m > 0:
                raise ValidationError(f"{self.kind} needs a multiplier m > 0, got {self.m}")
        if self.p is not None and not self.p >= 0:
            raise ValidationError(f"p must be >= 0, got {self.p}")
        for name in ("s1_0", "s2_0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be > 0, got {v}")

    @property
    def s1_start(self) -> float:
        return self.v0 if self.s1_0 is None else self.s1_0

    @property
    def s2_start(self) -> float:
        return self.v0 if self.s2_0 is None else self.s2_0

    @property
    def convex(self) -> bool:
        """True in the regime ``m >= 1`` where the CPPP payoff is convex."""
        return self.m is not None and self.m >= 1

    @property
    def standard_start(self) -> bool:
        return self.s1_start == self.v0 and self.s2_start == self.v0

    def require_p(self) -> float:
        if self.p is None:
            raise ValidationError(f"{self.kind} spec is not calibrated; call calibrate() first")
        return self.p


def obpp(alpha: float, T: float, v0: float, **kw) -> StrategySpec:
    return StrategySpec("obpp", alpha, T, v0, **kw)


def cppp(alpha: float, T: float, v0: float, m: float, **kw) -> StrategySpec:
    return StrategySpec("cppp", alpha, T, v0, m=m, **kw)


def obpi(alpha: float, T: float, v0: float, **kw) -> StrategySpec:
    return StrategySpec("obpi", alpha, T, v0, **kw)


def cppi(alpha: float, T: float, v0: float, m: float) -> StrategySpec:
    return StrategySpec("cppi", alpha, T, v0, m=m)


@dataclass(frozen=True)
class PortfolioSnapshot:
    """Strategy value split into floor/cushion and per-asset holdings.

    Index 1 is the reserve asset (cash account for PI strategies) and index 2
    the active (risky) asset.
    """

    value: float
    floor: float
    cushion: float
    exposure1: float
    exposure2: float
    shares1: float
    shares2: float


@dataclass(frozen=True)
class CushionParams:
    """Drift and volatility of the lognormal CPPP cushion."""

    mu_c: float
    sigma_c: float


def _solve_increasing(
    f: Callable[[float], float],
    fprime: Callable[[float], float],
    lo: float,
    hi: float,
    ftol: float,
) -> float:
    """Root of an increasing function on ``[lo, hi]``: Newton guarded by bisection."""
    f_lo, f_hi = f(lo), f(hi)
    # A root within roundoff of a bracket end (p -> 1 as alpha -> 0) is accepted as is.
    for end, f_end in ((hi, f_hi), (lo, f_lo)):
        if abs(f_end) <= ftol:
            return end
    if not (f_lo < 0 < f_hi):
        raise CalibrationError(
            f"root not bracketed: f({lo:.3g})={f_lo:.3g}, f({hi:.3g})={f_hi:.3g}", (lo, hi)
        )
    x = 0.5 * (lo + hi)
    for _ in range(MAX_ITER):
        fx = f(x)
        if fx == 0:
            return x
        if fx < 0:
            lo = x
        else:
            hi = x
        d = fprime(x)
        x_new = x - fx / d if d > 0 else math.nan
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= P_XTOL * max(1.0, abs(x)) and abs(f(x_new)) <= ftol:
            return x_new
        x = x_new
    raise CalibrationError(f"no convergence after {MAX_ITER} iterations", (lo, hi))


def solve_p_obpp(
    params: MarketParams,
    alpha: float,
    T: float,
    v0: float,
    s1_0: float | None = None,
    s2_0: float | None = None,
) -> float:
    """Number of ``S2`` shares ``p`` for which the OBPP set-up costs ``v0``.

    Solves ``alpha*s1_0 + V_ex(0; T, p*S2, alpha*S1) = v0``. Both initial
    prices default to ``v0``, in which case a solution exists iff
    ``alpha < 1`` and lies in ``(0, 1)``.

    Raises:
        CalibrationError: ``alpha * s1_0 >= v0`` (no solution) or the
            iteration does not converge.
    """
    s1_0 = v0 if s1_0 is None else s1_0
    s2_0 = v0 if s2_0 is None else s2_0
    if not alpha * s1_0 < v0:
        raise CalibrationError(
            f"no share count solves the budget condition for alpha={alpha}: "
            f"the floor alpha*S1(0)={alpha * s1_0:.6g} already uses up v0={v0:.6g}"
        )
    vol = sigma_hat(params)
    floor0 = alpha * s1_0

    def f(p):
        value, _, _ = margrabe(p * s2_0, floor0, vol, T)
        return floor0 + float(value) - v0

    def fprime(p):
        _, d1, _ = margrabe(p * s2_0, floor0, vol, T)
        return s2_0 * float(special.ndtr(d1))

    # Exchange-option parity bounds the root by p*s2_0 < v0.
    hi = v0 / s2_0
    return _solve_increasing(f, fprime, P_BRACKET_EPS * hi, hi * (1 - P_BRACKET_EPS), RESIDUAL_RTOL * v0)


def solve_p_obpi(market: SingleAssetMarket, alpha_pi: float, T: float, v0: float) -> float:
    """Number of shares ``p`` of the risky asset for a budget-neutral OBPI.

    Solves ``alpha_pi*v0*exp(-r*T) + Call(0; T, alpha_pi*v0, r, sigma, p*S) = v0``.
    ``alpha_pi = exp(r*T)`` consumes the whole budget and returns 0.
    """
    disc = math.exp(-market.r * T)
    floor0 = alpha_pi * v0 * disc
    if floor0 > v0 * (1 + 1e-15):
        raise CalibrationError(f"alpha_pi={alpha_pi} exceeds exp(r*T)={1 / disc:.12g}")
    if floor0 >= v0:
        return 0.0
    strike = alpha_pi * v0
    s0 = market.s0

    def f(p):
        return floor0 + bs_call(0.0, T, strike, market.r, market.sigma, p * s0) - v0

    def fprime(p):
        _, d1, _ = margrabe(p * s0, floor0, market.sigma, T)
        return s0 * float(special.ndtr(d1))

    hi = v0 / s0
    return _solve_increasing(f, fprime, P_BRACKET_EPS * hi, hi * (1 - P_BRACKET_EPS), RESIDUAL_RTOL * v0)


def calibrate(spec: StrategySpec, market: MarketParams | SingleAssetMarket) -> StrategySpec:
    """Return ``spec`` with ``p`` solved; CPPP/CPPI specs pass through."""
    if spec.kind == "obpp":
        p = solve_p_obpp(market, spec.alpha, spec.T, spec.v0, spec.s1_start, spec.s2_start)
    elif spec.kind == "obpi":
        p = solve_p_obpi(market, spec.alpha, spec.T, spec.v0)
    else:
        return spec
    return replace(spec, p=p)


# Array-level valuations. Arguments broadcast; used by the simulation oracle.


def obpp_value(spec: StrategySpec, params: MarketParams, t, s1, s2):
    """OBPP value ``alpha*S1 + V_ex(t; T, p*S2, alpha*S1)`` (arrays allowed)."""
    p = spec.require_p()
    s1 = np.asarray(s1, dtype=float)
    ex, _, _ = margrabe(p * np.asarray(s2, dtype=float), spec.alpha * s1, sigma_hat(params), spec.T - np.asarray(t))
    return spec.alpha * s1 + ex


def _log_cppp_cushion(spec: StrategySpec, params: MarketParams, t, s1, s2):
    m, a = spec.m, spec.alpha
    sh = sigma_hat(params)
    c0 = spec.v0 - a * spec.s1_start
    ratio0 = spec.s2_start / spec.s1_start
    return (
        math.log(c0 / spec.s1_start)
        + np.log(s1)
        + m * (np.log(s2) - np.log(s1) - math.log(ratio0))
        + 0.5 * m * (1 - m) * sh * sh * np.asarray(t, dtype=float)
    )


def cppp_value(spec: StrategySpec, params: MarketParams, t, s1, s2):
    """CPPP value ``alpha*S1 + beta(t) * S1 * (S2/S1)**m`` (arrays allowed).

    With general initial prices the cushion is
    ``(v0 - alpha*S1(0)) * S1/S1(0) * (R/R(0))**m * exp(m(1-m) sh^2 t / 2)``
    where ``R = S2/S1``; for ``S1(0) = S2(0) = v0`` this is the usual
    ``beta_CPPP`` form.
    """
    s1 = np.asarray(s1, dtype=float)
    return spec.alpha * s1 + np.exp(_log_cppp_cushion(spec, params, t, s1, s2))


def obpi_value(spec: StrategySpec, market: SingleAssetMarket, t, s):
    p = spec.require_p()
    tau = spec.T - np.asarray(t, dtype=float)
    floor = spec.alpha * spec.v0 * np.exp(-market.r * tau)
    call = bs_call(t, spec.T, spec.alpha * spec.v0, market.r, market.sigma, p * np.asarray(s, dtype=float))
    return floor + call


def _cppi_cushion(spec: StrategySpec, market: SingleAssetMarket, t, s):
    m, r = spec.m, market.r
    t = np.asarray(t, dtype=float)
    beta = (1 - spec.alpha * math.exp(-r * spec.T)) * np.exp(0.5 * m * (1 - m) * market.sigma**2 * t)
    growth = spec.v0 * np.exp(r * t)
    return beta * growth * np.exp(m * (np.log(s) - np.log(market.s0) - r * t))


def cppi_value(spec: StrategySpec, market: SingleAssetMarket, t, s):
    """CPPI value; the cushion is scaled by ``S(t)/S(0)`` so ``S(0)`` need not be ``v0``."""
    tau = spec.T - np.asarray(t, dtype=float)
    return spec.alpha * spec.v0 * np.exp(-market.r * tau) + _cppi_cushion(spec, market, t, s)


def _check_time(spec, t):
    if not 0 <= t <= spec.T:
        raise ValidationError(f"t must lie in [0, T={spec.T}], got {t}")


def value_obpp(spec: StrategySpec, params: MarketParams, state: MarketState) -> PortfolioSnapshot:
    """OBPP value with the Margrabe replicating holdings.

    The holdings are the deltas ``alpha*(1 - N(d2))`` of ``S1`` and
    ``p*N(d1)`` of ``S2``, both at most one share per guaranteed share.
    """
    _check_time(spec, state.t)
    p = spec.require_p()
    floor = spec.alpha * state.s1
    ex, d1, d2 = margrabe(p * state.s2, floor, sigma_hat(params), spec.T - state.t)
    ex, d1, d2 = float(ex), float(d1), float(d2)
    sh1 = spec.alpha * float(special.ndtr(-d2))
    sh2 = p * float(special.ndtr(d1))
    return PortfolioSnapshot(
        value=floor + ex,
        floor=floor,
        cushion=ex,
        exposure1=sh1 * state.s1,
        exposure2=sh2 * state.s2,
        shares1=sh1,
        shares2=sh2,
    )


def value_cppp(spec: StrategySpec, params: MarketParams, state: MarketState) -> PortfolioSnapshot:
    _check_time(spec, state.t)
    floor = spec.alpha * state.s1
    cushion = math.exp(float(_log_cppp_cushion(spec, params, state.t, state.s1, state.s2)))
    value = floor + cushion
    e2 = spec.m * cushion
    e1 = value - e2
    return PortfolioSnapshot(
        value=value,
        floor=floor,
        cushion=cushion,
        exposure1=e1,
        exposure2=e2,
        shares1=e1 / state.s1,
        shares2=e2 / state.s2,
    )


def value_obpi(spec: StrategySpec, market: SingleAssetMarket, state: AssetState) -> PortfolioSnapshot:
    _check_time(spec, state.t)
    p = spec.require_p()
    tau = spec.T - state.t
    floor = spec.alpha * spec.v0 * math.exp(-market.r * tau)
    call, d1, _ = margrabe(p * state.s, floor, market.sigma, tau)
    call = float(call)
    sh2 = p * float(special.ndtr(d1))
    value = floor + call
    e2 = sh2 * state.s
    e1 = value - e2
    return PortfolioSnapshot(value, floor, call, e1, e2, e1 / math.exp(market.r * state.t), sh2)


def value_cppi(spec: StrategySpec, market: SingleAssetMarket, state: AssetState) -> PortfolioSnapshot:
    _check_time(spec, state.t)
    floor = spec.alpha * spec.v0 * math.exp(-market.r * (spec.T - state.t))
    cushion = float(_cppi_cushion(spec, market, state.t, state.s))
    value = floor + cushion
    e2 = spec.m * cushion
    e1 = value - e2
    return PortfolioSnapshot(value, floor, cushion, e1, e2, e1 / math.exp(market.r * state.t), e2 / state.s)


def value(spec: StrategySpec, market, state) -> PortfolioSnapshot:
    """Dispatch to the valuation matching ``spec.kind``."""
    return {
        "obpp": value_obpp,
        "cppp": value_cppp,
        "obpi": value_obpi,
        "cppi": value_cppi,
    }[spec.kind](spec, market, state)


def terminal_value(spec: StrategySpec, market, *prices):
    """Terminal payoff on arrays of terminal prices (``s1, s2`` or ``s``)."""
    if spec.kind == "obpp":
        s1, s2 = (np.asarray(x, dtype=float) for x in prices)
        return np.maximum(spec.alpha * s1, spec.require_p() * s2)
    if spec.kind == "cppp":
        return cppp_value(spec, market, spec.T, *prices)
    if spec.kind == "obpi":
        (s,) = prices
        return np.maximum(spec.alpha * spec.v0, spec.require_p() * np.asarray(s, dtype=float))
    (s,) = prices
    return cppi_value(spec, market, spec.T, s)


def cushion_params(spec: StrategySpec, params: MarketParams) -> CushionParams:
    """Drift ``mu1 + m(mu2 - mu1)`` and volatility of the CPPP cushion."""
    m = spec.m
    if m is None or not m > 0:
        raise ValidationError("cushion_params needs a multiplier m > 0")
    s1, s2, rho = params.sigma1, params.sigma2, params.rho12
    var = (1 - m) ** 2 * s1**2 + 2 * (1 - m) * m * rho * s1 * s2 + m**2 * s2**2
    return CushionParams(mu_c=params.mu1 + m * (params.mu2 - params.mu1), sigma_c=math.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class CrossingReport:
    """Terminal payoffs per unit of ``S1(T)`` on a grid of index ratios."""

    ratio_grid: np.ndarray
    payoff_a: np.ndarray
    payoff_b: np.ndarray
    crossings: np.ndarray

    @property
    def n_crossings(self) -> int:
        return len(self.crossings)


def payoff_cross(
    spec_a: StrategySpec, spec_b: StrategySpec, params: MarketParams, ratio_grid
) -> CrossingReport:
    """Locate where two PP payoffs intersect as functions of ``S2(T)/S1(T)``.

    Crossings are sign changes of ``payoff_a - payoff_b`` between grid
    points, placed by linear interpolation. Touching without a sign change
    is not a crossing.
    """
    grid = np.asarray(ratio_grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("ratio_grid is empty")
    if spec_a.kind not in PP_KINDS or spec_b.kind not in PP_KINDS:
        raise ValidationError("payoff_cross compares OBPP/CPPP strategies")
    if (spec_a.alpha, spec_a.v0, spec_a.T) != (spec_b.alpha, spec_b.v0, spec_b.T):
        raise ValidationError("both strategies must share alpha, v0 and T")
    s1 = spec_a.s1_start
    pay_a = terminal_value(spec_a, params, s1, s1 * grid) / s1
    pay_b = terminal_value(spec_b, params, s1, s1 * grid) / s1
    diff = pay_a - pay_b
    # Scale-aware zero so that identical payoffs computed identically never cross.
    tol = 64 * np.finfo(float).eps * np.maximum(np.abs(pay_a), np.abs(pay_b))
    sign = np.where(np.abs(diff) <= tol, 0, np.sign(diff))
    nz = np.flatnonzero(sign)
    crossings = []
    for i, j in zip(nz[:-1], nz[1:]):
        if sign[i] != sign[j]:
            if j == i + 1:
                x0, x1, y0, y1 = grid[i], grid[j], diff[i], diff[j]
                crossings.append(x0 - y0 * (x1 - x0) / (y1 - y0))
            else:
                crossings.append(0.5 * (grid[i + 1] + grid[j - 1]))
    return CrossingReport(grid, pay_a, pay_b, np.asarray(crossings))
