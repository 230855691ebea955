"""With a riskless reserve asset the PP strategies become their PI twins.

Setting sigma1 = 0 and mu1 = r turns S1 into a zero-coupon bond; the OBPP
then holds the same shares as the OBPI and the two values coincide.
"""

import math

from perfpart import MarketParams, MarketState, SingleAssetMarket, StrategySpec, calibrate, value
from perfpart.strategies import obpi_value

r, T, v0 = 0.03, 1.0, 100.0
bond_market = MarketParams(mu1=r, mu2=0.097, sigma1=0.0, sigma2=0.214, rho12=0.0, r=r, degenerate=True)
stock = SingleAssetMarket(mu=0.097, sigma=0.214, r=r, s0=v0)

obpp = calibrate(StrategySpec("obpp", 0.95, T, v0, s1_0=v0 * math.exp(-r * T), s2_0=v0), bond_market)
obpi = calibrate(StrategySpec("obpi", 0.95, T, v0), stock)
print(f"p OBPP {obpp.p:.10f}   p OBPI {obpi.p:.10f}")

for t, s in ((0.0, 100.0), (0.5, 85.0), (0.9, 120.0)):
    bond = v0 * math.exp(-r * (T - t))
    pp = value(obpp, bond_market, MarketState(t, bond, s)).value
    pi = float(obpi_value(obpi, stock, t, s))
    print(f"t={t:.1f}  S={s:5.1f}   OBPP {pp:9.4f}   OBPI {pi:9.4f}")
