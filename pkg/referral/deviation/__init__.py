from referral.montecarlo.tree import Deviation, Placement

from .payoffs import (
    ChainLowerBounds,
    LevelOutOfHorizonError,
    PathProbabilities,
    Payoff,
    PayoffComparison,
    chain_holder_payoff,
    chain_lower_bounds,
    chain_payoff_grid,
    chain_referral_payoff,
    payoff_grid_frame,
    tree_honest_payoff,
    tree_path_probabilities,
    tree_payoff_grid,
    tree_referral_payoff,
)
