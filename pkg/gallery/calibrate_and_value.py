"""Calibrate an OBPP, then follow its value and allocation through time.

The guarantee is 95% of whatever the reserve asset is worth at maturity.
The option-based strategy buys that floor outright and spends the rest of
the budget on an exchange option into the risky asset.
"""

from perfpart import MarketParams, MarketState, StrategySpec, calibrate, sigma_hat, value

market = MarketParams(mu1=0.066, mu2=0.097, sigma1=0.037, sigma2=0.214, rho12=-0.15)
spec = calibrate(StrategySpec("obpp", alpha=0.95, T=1.0, v0=100.0), market)

print(f"ratio volatility  {sigma_hat(market):.4%}")
print(f"participation p   {spec.p:.6f}  (shares of S2 bought per unit of v0)")

print("\n    t  S1     S2      value   floor  in S1  in S2")
for t, s1, s2 in [(0.0, 100, 100), (0.25, 101, 92), (0.5, 103, 115), (0.75, 104, 80), (1.0, 106, 130)]:
    snap = value(spec, market, MarketState(t, s1, s2))
    print(
        f"{t:5.2f}  {s1:5.0f}  {s2:5.0f}  {snap.value:7.2f}  {snap.floor:6.2f}"
        f"  {snap.exposure1:5.1f}  {snap.exposure2:5.1f}"
    )

# The CPPP with the same budget keeps a constant multiple of its cushion in S2.
cppp = StrategySpec("cppp", alpha=0.95, T=1.0, v0=100.0, m=5.0)
snap = value(cppp, market, MarketState(0.5, 103, 115))
print(f"\nCPPP m=5 at t=0.5: value {snap.value:.2f}, exposure/cushion {snap.exposure2 / snap.cushion:.2f}")
