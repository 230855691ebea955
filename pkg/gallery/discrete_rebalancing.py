"""How far a CPPP traded at discrete dates drifts from the continuous rule.

Share counts are frozen between trades. With a cushion floored at zero a
gap through the floor leaves the whole portfolio in the reserve asset.
"""

import numpy as np

from perfpart import MarketParams, StrategySpec, sample_paths, simulate_strategy

market = MarketParams(mu1=0.066, mu2=0.097, sigma1=0.037, sigma2=0.214, rho12=-0.15)
spec = StrategySpec("cppp", 0.95, 1.0, 100.0, m=6.0)
batch = sample_paths(market, 100.0, 100.0, 1.0, n_steps=252, n_paths=50_000, seed=3, keep_steps=True)
exact = simulate_strategy(spec, market, batch)

print("trades  mean |V_disc - V_cont|  share below floor")
for n in (4, 12, 63, 252):
    v = simulate_strategy(spec, market, batch, rebalance=n)
    below = np.mean(v < 0.95 * batch.s1)
    print(f"{n:6d}  {np.mean(np.abs(v - exact)):22.4f}  {below:17.4%}")
