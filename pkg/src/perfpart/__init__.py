"""Performance participation strategies (OBPP, CPPP) in a two-asset Black-Scholes market.

The guarantee is a fraction of a risky reserve asset rather than cash. The
package prices the strategies, computes their payoff moments and Greeks in
closed form and cross-checks everything with an exact Monte Carlo sampler.
"""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    CancellationError,
    DegenerateInputError,
    MomentOverflowError,
    ValidationError,
)
from .greeks import (
    GreekSet,
    compute_greeks,
    finite_difference_greeks,
    greeks_cppp,
    greeks_obpp,
    implicit_multiplier_obpp,
    multiplier_distribution,
)
from .market import (
    AssetState,
    MarketParams,
    MarketState,
    SingleAssetMarket,
    discounted_market,
    expected_power_s1,
    ratio_params,
    sigma_hat,
)
from .moments import (
    MomentVector,
    central_moments,
    factorized_moment,
    m_star,
    mk_cppi,
    mk_cppp,
    mk_obpi,
    mk_obpp,
    strategy_moments,
)
from .pricing import bs_call, exchange_option, power_option_expectation, upper_partial_moment
from .simulation import (
    McEstimate,
    PathBatch,
    estimate_moments,
    estimate_raw_moment_tilted,
    radon_nikodym_weights,
    sample_paths,
    simulate_strategy,
)
from .strategies import (
    StrategySpec,
    calibrate,
    cushion_params,
    payoff_cross,
    solve_p_obpi,
    solve_p_obpp,
    terminal_value,
    value,
)
