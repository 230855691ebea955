"""Closed-form pricing: Black-Scholes call, Margrabe exchange option, power options.

Functions accept scalars or numpy arrays and broadcast; scalar inputs give
Python floats back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import special

from .errors import ValidationError
from .market import MarketParams, MarketState, checked_exp, sigma_hat

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _out(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def norm_cdf(x):
    """Standard normal cdf (``scipy.special.ndtr``, accurate to ~1 ulp)."""
    return _out(special.ndtr(x))


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _out(_INV_SQRT_2PI * np.exp(-0.5 * x * x))


def margrabe(s_long, s_short, vol, tau):
    """Value of ``(X_long(T) - X_short(T))^+`` given current leg values.

    ``vol`` is the volatility of the ratio ``X_long / X_short`` and ``tau`` the
    time to expiry. Returns ``(value, d1, d2)`` as arrays. Where
    ``vol * sqrt(tau) == 0`` the intrinsic value is returned and ``d1 = d2``
    is ``+inf``, ``-inf`` or ``0`` according to moneyness.
    """
    s_long, s_short, vol, tau = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (s_long, s_short, vol, tau))
    )
    vs = vol * np.sqrt(np.maximum(tau, 0.0))
    live = vs > 0
    safe_vs = np.where(live, vs, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # log of the quotient keeps full relative accuracy near the money,
        # which the steep tails of far out-of-the-money values amplify.
        log_m = np.log(s_long / s_short)
        d1 = np.where(live, (log_m + 0.5 * vs * vs) / safe_vs, np.sign(log_m) * np.inf)
    d1 = np.where(~live & (log_m == 0), 0.0, d1)
    d2 = np.where(live, d1 - vs, d1)
    value = np.where(
        live,
        s_long * special.ndtr(d1) - s_short * special.ndtr(d2),
        np.maximum(s_long - s_short, 0.0),
    )
    # Rounding can push a deep out-of-the-money value a hair below zero.
    return np.maximum(value, 0.0), d1, d2


def bs_call(t, T, strike, rate, sigma, spot_scaled):
    """Black-Scholes value at ``t`` of a call expiring at ``T``.

    Args:
        t: valuation time in years.
        T: expiry in years, ``T >= t``.
        strike: strike, ``> 0``.
        rate: continuous rate; any real value is accepted since the library
            also prices with the drift difference ``mu2 - mu1`` as the rate.
        sigma: volatility ``>= 0``.
        spot_scaled: spot already multiplied by the number of shares.

    Returns:
        Call value. At ``sigma = 0`` or ``T = t`` this is the discounted
        intrinsic value ``max(spot - strike * exp(-rate * (T - t)), 0)``.
    """
    tau = np.asarray(T, dtype=float) - np.asarray(t, dtype=float)
    if np.any(tau < 0):
        raise ValidationError("bs_call requires T >= t")
    if np.any(np.asarray(strike) <= 0):
        raise ValidationError("bs_call requires strike > 0")
    spot = np.asarray(spot_scaled, dtype=float)
    if np.any(spot < 0) or np.any(np.asarray(sigma) < 0):
        raise ValidationError("bs_call requires spot_scaled >= 0 and sigma >= 0")
    disc_strike = np.asarray(strike, dtype=float) * np.exp(-np.asarray(rate, dtype=float) * tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        value, _, _ = margrabe(spot, disc_strike, sigma, tau)
    return _out(np.where(spot > 0, value, 0.0))


@dataclass(frozen=True)
class ExchangeOptionQuote:
    """Margrabe value with its ``d1``/``d2`` arguments (``d1 - d2 = vol*sqrt(tau)``)."""

    value: float
    d1: float
    d2: float


def exchange_option(
    state: MarketState,
    T: float,
    a: float,
    b: float,
    params: MarketParams,
    receive: Literal["s2", "s1"] = "s2",
) -> ExchangeOptionQuote:
    """Margrabe value of an option to exchange one asset for the other.

    ``receive="s2"`` prices ``(b*S2(T) - a*S1(T))^+``, the option held by an
    OBPP portfolio; ``receive="s1"`` prices ``(a*S1(T) - b*S2(T))^+``. At
    ``state.t == T`` the terminal payoff is returned.
    """
    if T < state.t:
        raise ValidationError(f"need T >= t, got T={T}, t={state.t}")
    if not (a > 0 and b > 0):
        raise ValidationError(f"share counts must be positive, got a={a}, b={b}")
    leg1, leg2 = a * state.s1, b * state.s2
    if receive == "s2":
        s_long, s_short = leg2, leg1
    elif receive == "s1":
        s_long, s_short = leg1, leg2
    else:
        raise ValueError(f"receive must be 's2' or 's1', got {receive!r}")
    value, d1, d2 = margrabe(s_long, s_short, sigma_hat(params), T - state.t)
    return ExchangeOptionQuote(float(value), float(d1), float(d2))


def _d1_l(p_shares, spot0, strike_total, l, T, drift, sigma):
    vs = sigma * math.sqrt(T)
    num = math.log(p_shares * spot0 / strike_total) + (drift + (l - 0.5) * sigma * sigma) * T
    if vs == 0:
        # Deterministic terminal price: indicator is 1 iff p*S(T) >= K.
        det = math.log(p_shares * spot0 / strike_total) + drift * T
        return math.inf if det >= 0 else -math.inf
    return num / vs


def log_power_option_expectation(p_shares, spot0, strike_total, l, T, drift, sigma) -> float:
    """Natural log of :func:`power_option_expectation` (``-inf`` if it is 0)."""
    if l < 0:
        raise ValidationError(f"l must be >= 0, got {l}")
    if not strike_total > 0:
        raise ValidationError(f"strike_total must be > 0, got {strike_total}")
    if not (p_shares > 0 and spot0 > 0):
        raise ValidationError("p_shares and spot0 must be positive")
    d = _d1_l(p_shares, spot0, strike_total, l, T, drift, sigma)
    log_phi = float(special.log_ndtr(d))
    return (
        l * math.log(p_shares * spot0)
        + l * drift * T
        + 0.5 * l * (l - 1) * sigma * sigma * T
        + log_phi
    )


def power_option_expectation(p_shares, spot0, strike_total, l, T, drift, sigma) -> float:
    """``E[(p*S(T))**l * 1{p*S(T) >= K}]`` for lognormal ``S`` with the given drift.

    ``S(0) = spot0``; ``drift`` and ``sigma`` are the real-world (or
    shifted-measure) drift and volatility of ``S``.
    """
    log_v = log_power_option_expectation(p_shares, spot0, strike_total, l, T, drift, sigma)
    if log_v == -math.inf:
        return 0.0
    return checked_exp(log_v, f"power option expectation (l={l})")


def upper_partial_moment(i, p_shares, spot0, strike_total, T, drift, sigma) -> float:
    """``E[((p*S(T) - K)^+)**i]`` by binomial expansion over power options."""
    if i < 1:
        raise ValidationError(f"i must be >= 1, got {i}")
    terms = []
    for l in range(i + 1):
        e_l = power_option_expectation(p_shares, spot0, strike_total, l, T, drift, sigma)
        terms.append(math.comb(i, l) * (-1) ** (i - l) * strike_total ** (i - l) * e_l)
    return max(math.fsum(terms), 0.0)
