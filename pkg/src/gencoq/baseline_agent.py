"""Traditional Q-learning GenCo on a fixed, evenly spaced quantity grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gencoq.market_env import Bid, DomainError, GenCoParams
from gencoq.q_core import (
    LearningParams,
    NormalizationState,
    QTable,
    epsilon_greedy_probabilities,
    normalize_reward,
    sample_action,
    simplified_update,
    softmax_probabilities,
)


def build_action_grid(lo: float, hi: float, step: float) -> np.ndarray:
    """Quantities ``lo, lo + step, ..., hi`` inclusive."""
    if not lo < hi or not step > 0:
        raise DomainError(f"need lo < hi and step > 0, got ({lo}, {hi}, {step})")
    n = (hi - lo) / step
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise DomainError(f"range [{lo}, {hi}] is not divisible by step {step}")
    return lo + step * np.arange(int(round(n)) + 1, dtype=float)


@dataclass
class BaselineAgent:
    """One GenCo learning over ``action_grid`` with the opponent's grid as states.

    The state is the opponent's last realised quantity, snapped to the
    nearest opponent grid point. Before anything is observed the estimate is
    the midpoint of the opponent's grid.
    """

    genco: GenCoParams
    action_grid: np.ndarray
    opponent_grid: np.ndarray
    learning: LearningParams = field(default_factory=LearningParams)
    q: QTable = field(init=False)
    norm: NormalizationState = field(default_factory=NormalizationState)
    estimated_opponent_action: float = field(init=False)
    last_own_action: float | None = None
    steps: int = 0

    def __post_init__(self) -> None:
        self.action_grid = np.asarray(self.action_grid, dtype=float)
        self.opponent_grid = np.asarray(self.opponent_grid, dtype=float)
        if np.any(np.diff(self.action_grid) <= 0):
            raise DomainError("action grid must be strictly increasing")
        if self.action_grid[0] < 0 or self.action_grid[-1] > self.genco.p_max:
            raise DomainError(f"action grid must lie within [0, {self.genco.p_max}]")
        self.q = QTable.zeros(self.opponent_grid, self.action_grid)
        self.estimated_opponent_action = 0.5 * (self.opponent_grid[0] + self.opponent_grid[-1])

    @classmethod
    def from_step(
        cls,
        genco: GenCoParams,
        opponent: GenCoParams,
        step: float,
        learning: LearningParams | None = None,
    ) -> "BaselineAgent":
        return cls(
            genco,
            build_action_grid(0.0, genco.p_max, step),
            build_action_grid(0.0, opponent.p_max, step),
            learning or LearningParams(),
        )

    @property
    def temperature(self) -> float:
        return self.learning.temperature_at(self.steps)

    @property
    def state_index(self) -> int:
        return self.q.nearest_state(self.estimated_opponent_action)

    def policy(self) -> np.ndarray:
        row = self.q.values[self.state_index]
        if self.learning.epsilon is not None:
            return epsilon_greedy_probabilities(row, self.learning.epsilon)
        return softmax_probabilities(row, self.temperature)

    def act(self, rng: np.random.Generator) -> Bid:
        idx = sample_action(self.policy(), rng)
        self.last_own_action = float(self.action_grid[idx])
        return Bid(self.last_own_action)

    def greedy_action(self) -> float:
        return float(self.action_grid[int(np.argmax(self.q.values[self.state_index]))])

    def observe(self, own_q: float, opponent_q: float, raw_profit: float) -> "BaselineAgent":
        reward, self.norm = normalize_reward(raw_profit, self.norm)
        simplified_update(
            self.q, self.state_index, self.q.nearest_action(own_q), reward, self.learning
        )
        self.estimated_opponent_action = float(opponent_q)
        self.steps += 1
        return self
