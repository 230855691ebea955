"""Two-asset Black-Scholes market and the index-ratio process.

The reserve asset ``S1`` and the active asset ``S2`` follow correlated
geometric Brownian motions driven by the lower-triangular volatility matrix

    [[sigma1,          0                      ],
     [rho12 * sigma2,  sqrt(1 - rho12**2) * sigma2]]

Everything that depends on the market only through the ratio
``S2 / S1`` (option values, CPPP values, moments) is expressed via
:func:`sigma_hat` and :func:`ratio_params`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MomentOverflowError, ValidationError

# Largest argument accepted by math.exp without overflow.
LOG_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class MarketParams:
    """Drifts, volatilities, correlation and rate of the two-asset market.

    All rates are continuous decimals per year and volatilities decimals per
    square-root year. Construction enforces ``sigma2 >= sigma1 > 0``,
    ``mu2 >= mu1 >= r >= 0`` and ``-1 < rho12 < 1``.

    ``degenerate=True`` relaxes ``sigma1 > 0`` to ``sigma1 >= 0`` so that the
    reserve asset can stand in for a zero-coupon bond (``sigma1 = 0``,
    ``mu1 = r``).
    """

    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    rho12: float
    r: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        vals = (self.mu1, self.mu2, self.sigma1, self.sigma2, self.rho12, self.r)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"market parameters must be finite, got {vals}")
        if self.degenerate and self.sigma1 < 0:
            raise ValidationError(f"sigma1 must be >= 0, got {self.sigma1}")
        if not self.degenerate and not self.sigma1 > 0:
            raise ValidationError(f"sigma1 must be > 0, got {self.sigma1}")
        if self.sigma2 < self.sigma1:
            raise ValidationError(
                f"need sigma2 >= sigma1, got sigma1={self.sigma1}, sigma2={self.sigma2}"
            )
        if not (self.mu2 >= self.mu1 >= self.r >= 0):
            raise ValidationError(
                f"need mu2 >= mu1 >= r >= 0, got mu1={self.mu1}, mu2={self.mu2}, r={self.r}"
            )
        if not -1.0 < self.rho12 < 1.0:
            raise ValidationError(f"rho12 must lie strictly in (-1, 1), got {self.rho12}")

    @property
    def sigma_matrix(self) -> np.ndarray:
        rho = self.rho12
        return np.array(
            [[self.sigma1, 0.0], [rho * self.sigma2, math.sqrt(1.0 - rho * rho) * self.sigma2]]
        )

    @property
    def covariance(self) -> np.ndarray:
        """Instantaneous covariance matrix ``C`` of the log-returns."""
        c12 = self.rho12 * self.sigma1 * self.sigma2
        return np.array([[self.sigma1**2, c12], [c12, self.sigma2**2]])

    @property
    def sigma_hat(self) -> float:
        return sigma_hat(self)


@dataclass(frozen=True)
class MarketState:
    """Asset prices at time ``t``. The index ratio is ``s2 / s1``."""

    t: float
    s1: float
    s2: float

    def __post_init__(self):
        if not self.t >= 0:
            raise ValidationError(f"t must be >= 0, got {self.t}")
        if not (self.s1 > 0 and self.s2 > 0):
            raise ValidationError(f"prices must be positive, got s1={self.s1}, s2={self.s2}")

    @property
    def ratio(self) -> float:
        return self.s2 / self.s1


@dataclass(frozen=True)
class RatioParams:
    """Dynamics of ``S2 / S1``: drift under P, volatility, drift under P~_k."""

    mu_hat: float
    sigma_hat: float
    mu_hat_tilde_k: float
    k: int


@dataclass(frozen=True)
class SingleAssetMarket:
    """One risky asset plus a cash account, the setting of classical OBPI/CPPI.

    ``s0`` is the initial price of the risky asset. The discounted market of a
    performance participation strategy is ``SingleAssetMarket(mu, sigma_hat,
    0.0, 1.0)``; see :func:`discounted_market`.
    """

    mu: float
    sigma: float
    r: float = 0.0
    s0: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma) and math.isfinite(self.r)):
            raise ValidationError("single-asset market parameters must be finite")
        if self.sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        if not self.s0 > 0:
            raise ValidationError(f"s0 must be > 0, got {self.s0}")


@dataclass(frozen=True)
class AssetState:
    """Price ``s`` of the single risky asset at time ``t``."""

    t: float
    s: float

    def __post_init__(self):
        if not self.t >= 0:
            raise ValidationError(f"t must be >= 0, got {self.t}")
        if not self.s > 0:
            raise ValidationError(f"s must be > 0, got {self.s}")


def sigma_hat(params: MarketParams) -> float:
    """Volatility of the index ratio ``S2 / S1``."""
    s1, s2, rho = params.sigma1, params.sigma2, params.rho12
    var = s1 * s1 - 2.0 * rho * s1 * s2 + s2 * s2
    return math.sqrt(max(var, 0.0))


def ratio_params(params: MarketParams, k: int = 1) -> RatioParams:
    """Drift and volatility of the index ratio, also under the measure P~_k.

    P~_k has density ``S1(t)**k / E[S1(t)**k]`` with respect to P. Each unit
    of ``k`` shifts the ratio drift by ``rho12*sigma1*sigma2 - sigma1**2``;
    ``k = 0`` leaves P unchanged and ``k = 1`` gives drift ``mu2 - mu1``.
    """
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    shift = params.rho12 * params.sigma1 * params.sigma2 - params.sigma1**2
    excess = params.mu2 - params.mu1
    return RatioParams(
        mu_hat=excess - shift,
        sigma_hat=sigma_hat(params),
        mu_hat_tilde_k=excess + (k - 1) * shift,
        k=k,
    )


def checked_exp(log_value: float, what: str = "expectation") -> float:
    """Exponentiate a log-space result, raising instead of returning inf."""
    if log_value > LOG_MAX:
        raise MomentOverflowError(f"{what} overflows: log value {log_value:.6g} > {LOG_MAX:.6g}")
    return math.exp(log_value)


def log_expected_power_s1(params: MarketParams, s1_0: float, k: int, t: float) -> float:
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    if t < 0:
        raise ValidationError(f"t must be >= 0, got {t}")
    if not s1_0 > 0:
        raise ValidationError(f"s1_0 must be > 0, got {s1_0}")
    return k * math.log(s1_0) + k * params.mu1 * t + 0.5 * k * (k - 1) * params.sigma1**2 * t


def expected_power_s1(params: MarketParams, s1_0: float, k: int, t: float) -> float:
    """``E_P[S1(t)**k]`` for the lognormal reserve asset."""
    return checked_exp(log_expected_power_s1(params, s1_0, k, t), f"E[S1({t})^{k}]")


def discounted_market(params: MarketParams, k: int = 0) -> SingleAssetMarket:
    """The reserve-asset-numeraire market: cash rate 0, risky asset ``S2/S1``.

    The drift is that of the index ratio under P~_k (``k = 0`` is P itself).
    """
    rp = ratio_params(params, k)
    return SingleAssetMarket(mu=rp.mu_hat_tilde_k, sigma=rp.sigma_hat, r=0.0, s0=1.0)
