"""Expected return, risk and tail shape of OBPP against CPPP.

Reproduces the layout of the standard moment table: the equal-expectation
multiplier m* gives a CPPP with the same mean as the OBPP, but its payoff
is far more skewed and heavy-tailed.
"""

from perfpart import MarketParams, StrategySpec, calibrate, m_star, strategy_moments

market = MarketParams(mu1=0.066, mu2=0.097, sigma1=0.037, sigma2=0.214, rho12=-0.15)
obpp = calibrate(StrategySpec("obpp", 0.95, 1.0, 100.0), market)
ms = m_star(obpp, market)
print(f"m* = {ms:.4f}\n")

columns = [("OBPP", obpp), ("CPPP m*", StrategySpec("cppp", 0.95, 1.0, 100.0, m=ms))]
columns += [(f"CPPP m={m}", StrategySpec("cppp", 0.95, 1.0, 100.0, m=float(m))) for m in (3, 5, 6, 7, 8)]

print(f"{'':10s}{'mean':>9s}{'std':>9s}{'skew':>10s}{'ex.kurt':>14s}")
for name, spec in columns:
    mv = strategy_moments(spec, market, K=4, dimension="return")
    print(f"{name:10s}{mv.mean:9.2%}{mv.std:9.2%}{mv.skewness:10.4f}{mv.excess_kurtosis:14.4f}")
