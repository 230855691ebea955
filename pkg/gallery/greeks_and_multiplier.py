"""Greeks along the index ratio and the OBPP's hidden multiplier.

An OBPP behaves like a CPPP whose multiplier moves with the market: large
when the option is out of the money, close to one deep in the money.
"""

import numpy as np

from perfpart import (
    MarketParams,
    MarketState,
    StrategySpec,
    calibrate,
    compute_greeks,
    implicit_multiplier_obpp,
    multiplier_distribution,
)

market = MarketParams(mu1=0.066, mu2=0.097, sigma1=0.037, sigma2=0.214, rho12=-0.15)
obpp = calibrate(StrategySpec("obpp", 0.95, 1.0, 100.0), market)
cppp = StrategySpec("cppp", 0.95, 1.0, 100.0, m=4.0)

print(" ratio   m_OBPP   delta2 OBPP  delta2 CPPP   vega OBPP  vega CPPP")
for ratio in (0.5, 0.8, 1.0, 1.2, 1.5, 2.0):
    state = MarketState(0.75, 1.0, ratio)
    go, gc = compute_greeks(obpp, market, state), compute_greeks(cppp, market, state)
    mult = implicit_multiplier_obpp(obpp, market, state)
    print(f"{ratio:6.2f} {mult:8.2f} {go.delta2:12.4f} {gc.delta2:12.4f} {go.vega:11.4f} {gc.vega:10.4f}")

print("\nquantiles of m_OBPP under P")
for t in (0.25, 0.5, 0.75):
    cdf = multiplier_distribution(obpp, market, t, n_paths=200_000, seed=1)
    q = cdf.quantile(np.array([0.05, 0.5, 0.95]))
    print(f"  t={t:.2f}: 5% {q[0]:6.2f}   median {q[1]:6.2f}   95% {q[2]:6.2f}")
