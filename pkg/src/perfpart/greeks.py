"""Deltas, gammas and vegas of OBPP and CPPP, and the OBPP implicit multiplier.

Greeks are taken with respect to the prices ``s1``, ``s2`` and the ratio
volatility ``sigma_hat``; the calibrated ``p`` is held fixed. Vega is the
sensitivity to ``sigma_hat`` as a whole, not to the individual
volatilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import ValidationError
from .market import MarketParams, MarketState, ratio_params, sigma_hat
from .pricing import margrabe, norm_pdf
from .strategies import StrategySpec, _log_cppp_cushion, value

FD_DELTA_BUMP = 5e-2
FD_GAMMA_BUMP = 0.5
FD_VEGA_BUMP = 0.1
FD_LEVELS = 3


@dataclass(frozen=True)
class GreekSet:
    delta1: float
    delta2: float
    gamma1: float
    gamma2: float
    vega: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.delta1, self.delta2, self.gamma1, self.gamma2, self.vega)


def _check_state(spec: StrategySpec, state: MarketState, kind: str):
    if spec.kind != kind:
        raise ValidationError(f"expected a {kind} strategy, got {spec.kind}")
    if not 0 <= state.t <= spec.T:
        raise ValidationError(f"t must lie in [0, T={spec.T}], got {state.t}")


def greeks_obpp(spec: StrategySpec, params: MarketParams, state: MarketState) -> GreekSet:
    """Closed-form OBPP Greeks.

    At ``t = T`` the limits are returned: deltas ``(0, p)`` in the money,
    ``(alpha, 0)`` out of the money and ``(alpha/2, p/2)`` exactly at the
    money; gammas are 0 except at the money where they diverge (``inf``);
    vega is 0.
    """
    _check_state(spec, state, "obpp")
    p, a = spec.require_p(), spec.alpha
    sh = sigma_hat(params)
    tau = spec.T - state.t
    _, d1, d2 = margrabe(p * state.s2, a * state.s1, sh, tau)
    d1, d2 = float(d1), float(d2)
    delta1 = a * float(special.ndtr(-d2))
    delta2 = p * float(special.ndtr(d1))
    vs = sh * math.sqrt(tau)
    if vs == 0:
        at_money = d1 == 0
        g = math.inf if at_money else 0.0
        return GreekSet(delta1, delta2, g, g, 0.0)
    gamma1 = a * norm_pdf(d2) / (state.s1 * vs)
    gamma2 = p * norm_pdf(d1) / (state.s2 * vs)
    vega = p * state.s2 * norm_pdf(d1) * math.sqrt(tau)
    return GreekSet(delta1, delta2, gamma1, gamma2, vega)


def greeks_cppp(spec: StrategySpec, params: MarketParams, state: MarketState) -> GreekSet:
    """Closed-form CPPP Greeks from the cushion ``C = beta * s1 * (s2/s1)**m``.

    ``delta1 = alpha + (1-m) C/s1``, ``delta2 = m C/s2``,
    ``gamma_i = m(m-1) C/s_i**2``, ``vega = -m(m-1) sigma_hat t C``.
    """
    _check_state(spec, state, "cppp")
    m = spec.m
    c = math.exp(float(_log_cppp_cushion(spec, params, state.t, state.s1, state.s2)))
    curv = m * (m - 1) * c
    return GreekSet(
        delta1=spec.alpha + (1 - m) * c / state.s1,
        delta2=m * c / state.s2,
        gamma1=curv / state.s1**2,
        gamma2=curv / state.s2**2,
        vega=-curv * sigma_hat(params) * state.t,
    )


def compute_greeks(spec: StrategySpec, params: MarketParams, state: MarketState) -> GreekSet:
    if spec.kind == "obpp":
        return greeks_obpp(spec, params, state)
    if spec.kind == "cppp":
        return greeks_cppp(spec, params, state)
    raise ValidationError(f"Greeks are implemented for OBPP and CPPP, not {spec.kind}")


def implicit_multiplier_ratio(spec: StrategySpec, params: MarketParams, t, ratio):
    """Vectorized :func:`implicit_multiplier_obpp` in terms of ``ratio = s2/s1``.

    Uses ``m = 1 / (1 - (alpha / (p R)) * N(d2) / N(d1))`` in log space so
    that deep out-of-the-money states keep full precision.
    """
    p, a = spec.require_p(), spec.alpha
    ratio = np.asarray(ratio, dtype=float)
    tau = spec.T - np.asarray(t, dtype=float)
    _, d1, d2 = margrabe(p * ratio, a, sigma_hat(params), tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q = np.log(a / (p * ratio)) + special.log_ndtr(d2) - special.log_ndtr(d1)
        m = -1.0 / np.expm1(log_q)
    # Worthless at expiry (d1 = d2 = -inf, or exactly at the money): m diverges.
    m = np.where(np.isnan(m) | (m <= 0), np.inf, m)
    return float(m) if m.ndim == 0 else m


def implicit_multiplier_obpp(spec: StrategySpec, params: MarketParams, state: MarketState) -> float:
    """Multiplier of the CPPP that holds the same exposure as the OBPP.

    ``m = p s2 N(d1) / V_ex``: exposure to ``S2`` over the cushion. It
    exceeds 1 for ``t < T``. At ``t = T`` it is ``pR / (pR - alpha)`` in the
    money and ``inf`` when the option expires worthless.
    """
    _check_state(spec, state, "obpp")
    return implicit_multiplier_ratio(spec, params, state.t, state.ratio)


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    """Step CDF of a sample; ``samples`` are sorted and may contain ``inf``."""

    samples: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.searchsorted(self.samples, x, side="right") / self.samples.size
        return float(out) if out.ndim == 0 else out

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        idx = np.clip(np.ceil(q * self.samples.size).astype(int) - 1, 0, self.samples.size - 1)
        out = self.samples[idx]
        return float(out) if out.ndim == 0 else out

    @property
    def n(self) -> int:
        return self.samples.size


def sample_ratio(params: MarketParams, ratio0: float, t: float, n_paths: int, seed: int,
                 threads: int | None = None) -> np.ndarray:
    """Exact draws of ``S2(t)/S1(t)`` under P, block-seeded like the path sampler."""
    from .simulation import block_generator, map_blocks

    rp = ratio_params(params)
    loc = math.log(ratio0) + (rp.mu_hat - 0.5 * rp.sigma_hat**2) * t
    scale = rp.sigma_hat * math.sqrt(t)
    out = np.empty(n_paths)

    def work(b, start, stop):
        z = block_generator(seed, b).standard_normal(stop - start)
        out[start:stop] = np.exp(loc + scale * z)

    map_blocks(work, n_paths, threads)
    return out


def multiplier_distribution(
    spec: StrategySpec,
    params: MarketParams,
    t: float,
    n_paths: int,
    seed: int = 0,
    threads: int | None = None,
) -> EmpiricalCDF:
    """Empirical CDF of the OBPP implicit multiplier at time ``t`` under P."""
    if not 0 < t < spec.T:
        raise ValidationError(f"need 0 < t < T={spec.T}, got {t}")
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths}")
    r = sample_ratio(params, spec.s2_start / spec.s1_start, t, n_paths, seed, threads)
    return EmpiricalCDF(np.sort(implicit_multiplier_ratio(spec, params, t, r)))


def with_sigma_hat(params: MarketParams, target: float) -> MarketParams:
    """Same market with ``rho12`` adjusted so the ratio volatility is ``target``."""
    s1, s2 = params.sigma1, params.sigma2
    rho = (s1 * s1 + s2 * s2 - target * target) / (2 * s1 * s2)
    return replace(params, rho12=rho)


def curvature_scale(spec: StrategySpec, params: MarketParams, t: float) -> float:
    """Relative price move over which the value function visibly bends.

    ``sigma_hat * sqrt(T - t)`` for OBPP (capped at 1) and ``1/(m+1)`` for
    CPPP, whose value is a sum of powers ``s1**(1-m) * s2**m``.
    """
    if spec.kind == "cppp":
        return 1.0 / (abs(spec.m) + 1.0)
    return min(1.0, sigma_hat(params) * math.sqrt(max(spec.T - t, 0.0)))


def richardson(diff, h: float, levels: int = FD_LEVELS) -> float:
    """Extrapolate a central difference ``diff(h)`` (error even in ``h``) to ``h -> 0``."""
    table = [diff(h / 2**i) for i in range(levels + 1)]
    for j in range(1, levels + 1):
        table = [(4**j * table[i + 1] - table[i]) / (4**j - 1) for i in range(len(table) - 1)]
    return table[0]


def finite_difference_greeks(
    spec: StrategySpec,
    params: MarketParams,
    state: MarketState,
    delta_bump: float = FD_DELTA_BUMP,
    gamma_bump: float = FD_GAMMA_BUMP,
    vega_bump: float = FD_VEGA_BUMP,
    levels: int = FD_LEVELS,
) -> GreekSet:
    """Central finite differences of the strategy value, Richardson-extrapolated.

    A tiny bump leaves almost no digits once the Greek's contribution to the
    value is small next to the value itself (a thin CPPP cushion, a second
    difference). So each difference starts from a large bump, a fraction of
    the price times :func:`curvature_scale`, and ``levels`` halvings
    cancel the truncation error. Vega bumps ``sigma_hat`` through the
    correlation by ``vega_bump * sigma_hat``, kept inside the attainable
    range.
    """
    def v(s1, s2, prm=params):
        return value(spec, prm, MarketState(state.t, s1, s2)).value

    s1, s2 = state.s1, state.s2
    mid = v(s1, s2)
    ell = curvature_scale(spec, params, state.t)

    def first(f, x):
        return richardson(lambda h: (f(x + h) - f(x - h)) / (2 * h), delta_bump * ell * x, levels)

    def second(f, x):
        return richardson(lambda h: (f(x + h) - 2 * mid + f(x - h)) / (h * h), gamma_bump * ell * x, levels)

    along1, along2 = (lambda x: v(x, s2)), (lambda x: v(s1, x))
    sh = sigma_hat(params)
    lo, hi = abs(params.sigma2 - params.sigma1), params.sigma1 + params.sigma2
    hv = min(vega_bump * sh, 0.5 * (sh - lo), 0.5 * (hi - sh))

    def dv(h):
        up, down = with_sigma_hat(params, sh + h), with_sigma_hat(params, sh - h)
        return (v(s1, s2, up) - v(s1, s2, down)) / (2 * h)

    return GreekSet(
        delta1=first(along1, s1),
        delta2=first(along2, s2),
        gamma1=second(along1, s1),
        gamma2=second(along2, s2),
        vega=richardson(dv, hv, levels),
    )


def relative_error(approx: GreekSet, exact: GreekSet) -> GreekSet:
    def rel(a, e):
        if a == e:
            return 0.0
        return abs(a - e) / abs(e) if e != 0 else math.inf

    return GreekSet(*(rel(a, e) for a, e in zip(approx.as_tuple(), exact.as_tuple())))
