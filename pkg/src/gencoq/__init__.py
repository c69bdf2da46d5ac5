"""Q-learning GenCos in a repeated two-player Cournot electricity market.

Two learners are provided: a traditional tabular Q-learner over a fixed
quantity grid, and a dichotomy learner that halves both players' bidding
ranges round by round using a 2x2 Q-table.
"""

from gencoq.market_env import (
    Bid,
    GenCoParams,
    MarketParams,
    clear_price,
    gen_cost,
    perturb_lambda,
    profit,
)
from gencoq.nash_oracle import NashPoint, analytic_ne, brute_force_ne

__all__ = [
    "Bid",
    "GenCoParams",
    "MarketParams",
    "NashPoint",
    "analytic_ne",
    "brute_force_ne",
    "clear_price",
    "gen_cost",
    "perturb_lambda",
    "profit",
]

__version__ = "0.1.0"
