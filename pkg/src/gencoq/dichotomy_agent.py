"""Dichotomy-improved Q-learning.

Each round both GenCos learn over a 2x2 Q-table whose actions are the
centres of the two halves of their own bidding range and whose states are
the centres of the opponent's halves. When a matching pair of cells in the
two tables exceeds the threshold, both ranges are halved towards the
corresponding quadrant and a fresh round starts on the smaller ranges.

Two reward signals are available. ``"expected"`` (the default) scores an
action by its mean observed profit over both opponent candidates, min-max
scaled across the agent's own candidates; profit is linear in the opponent's
quantity, so this ranks the candidates against the opponent's range midpoint.
``"running_max"`` divides each raw profit by the round's running maximum.
It is kept for comparison and does not track the equilibrium reliably.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from gencoq.market_env import Bid, DomainError, GenCoParams, MarketParams, profit
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

LOW, HIGH = "low", "high"


@dataclass(frozen=True)
class SearchRange:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise DomainError(f"empty search range [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, other: "SearchRange") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


class Quadrant(enum.Enum):
    """Joint half choices; values are ``(x_half, y_half)``."""

    M1 = (LOW, LOW)
    M2 = (HIGH, LOW)
    M3 = (LOW, HIGH)
    M4 = (HIGH, HIGH)


# (x state, x action, y state, y action) cells that must all exceed the threshold.
# Index 0 is the low candidate / the opponent's low candidate.
QUADRANT_CELLS = {
    Quadrant.M1: (0, 0, 0, 0),
    Quadrant.M2: (0, 1, 1, 0),
    Quadrant.M3: (1, 0, 0, 1),
    Quadrant.M4: (1, 1, 1, 1),
}


@dataclass(frozen=True)
class QuadrantDecision:
    quadrant: Quadrant | None
    fallback: bool = False

    @property
    def x_half(self) -> str | None:
        return self.quadrant.value[0] if self.quadrant else None

    @property
    def y_half(self) -> str | None:
        return self.quadrant.value[1] if self.quadrant else None


def candidate_actions(r: SearchRange) -> tuple[float, float]:
    """Centres of the low and high halves of ``r``."""
    w = r.hi - r.lo
    return r.lo + 0.25 * w, r.lo + 0.75 * w


def contract_range(r: SearchRange, half: str) -> SearchRange:
    mid = 0.5 * (r.lo + r.hi)
    if half == LOW:
        return SearchRange(r.lo, mid)
    if half == HIGH:
        return SearchRange(mid, r.hi)
    raise DomainError(f"half must be {LOW!r} or {HIGH!r}, got {half!r}")


def paired_sums(q_x: QTable, q_y: QTable) -> dict[Quadrant, tuple[float, float]]:
    if q_x.shape != (2, 2) or q_y.shape != (2, 2):
        raise DomainError(f"quadrant rules need 2x2 tables, got {q_x.shape} and {q_y.shape}")
    return {
        quad: (q_x.values[sx, ax], q_y.values[sy, ay])
        for quad, (sx, ax, sy, ay) in QUADRANT_CELLS.items()
    }


def select_quadrant(q_x: QTable, q_y: QTable, threshold: float) -> QuadrantDecision:
    """Quadrant whose paired cells both exceed ``threshold``, or ``None``.

    When several quadrants qualify, the largest paired sum wins and ties go
    to the lowest index.
    """
    pairs = paired_sums(q_x, q_y)
    firing = [quad for quad, (vx, vy) in pairs.items() if vx > threshold and vy > threshold]
    if not firing:
        return QuadrantDecision(None)
    return QuadrantDecision(max(firing, key=lambda quad: sum(pairs[quad])))


def fallback_quadrant(q_x: QTable, q_y: QTable) -> QuadrantDecision:
    pairs = paired_sums(q_x, q_y)
    return QuadrantDecision(max(pairs, key=lambda quad: sum(pairs[quad])), fallback=True)


def expected_profit_reward(payoffs: np.ndarray, action: int) -> float:
    """Reward in [0, 1] for ``action`` from a table of last observed profits.

    ``payoffs[s, a]`` holds the profit last seen for own action ``a`` against
    opponent candidate ``s`` (NaN if never seen). Each action is valued by its
    mean over opponent candidates and the values are min-max scaled. Until
    every cell has been observed, or when all actions tie, the reward is 0.
    """
    if np.isnan(payoffs).any():
        return 0.0
    value = payoffs.mean(axis=0)
    lo, hi = value.min(), value.max()
    if hi <= lo:
        return 0.0
    return float((value[action] - lo) / (hi - lo))


@dataclass
class DichotomyAgent:
    """One GenCo's side of the dichotomy search."""

    genco: GenCoParams
    range: SearchRange
    opponent_range: SearchRange
    learning: LearningParams = field(default_factory=LearningParams)
    reward: str = "expected"
    q: QTable = field(init=False)
    norm: NormalizationState = field(init=False)
    payoffs: np.ndarray = field(init=False)
    estimated_opponent_action: float = field(init=False)
    round_index: int = 0
    steps_in_round: int = 0
    last_own_action: float | None = None

    def __post_init__(self) -> None:
        if self.range.lo < 0 or self.range.hi > self.genco.p_max:
            raise DomainError(f"range [{self.range.lo}, {self.range.hi}] outside [0, {self.genco.p_max}]")
        if self.reward not in ("expected", "running_max"):
            raise ValueError(f"unknown reward signal {self.reward!r}")
        self.estimated_opponent_action = self.opponent_range.mid
        self._fresh_round()

    @classmethod
    def full_range(
        cls,
        genco: GenCoParams,
        opponent: GenCoParams,
        learning: LearningParams | None = None,
        reward: str = "expected",
    ) -> "DichotomyAgent":
        return cls(
            genco,
            SearchRange(0.0, genco.p_max),
            SearchRange(0.0, opponent.p_max),
            learning or LearningParams(),
            reward,
        )

    def _fresh_round(self) -> None:
        self.q = QTable.zeros(candidate_actions(self.opponent_range), candidate_actions(self.range))
        self.norm = NormalizationState()
        self.payoffs = np.full((2, 2), np.nan)
        self.steps_in_round = 0

    @property
    def candidates(self) -> tuple[float, float]:
        return candidate_actions(self.range)

    @property
    def temperature(self) -> float:
        return self.learning.temperature_at(self.steps_in_round)

    @property
    def state_index(self) -> int:
        return self.q.nearest_state(self.estimated_opponent_action)

    def act(self, rng: np.random.Generator) -> Bid:
        row = self.q.values[self.state_index]
        if self.learning.epsilon is not None:
            probs = epsilon_greedy_probabilities(row, self.learning.epsilon)
        else:
            probs = softmax_probabilities(row, self.temperature)
        self.last_own_action = float(self.q.action_labels[sample_action(probs, rng)])
        return Bid(self.last_own_action)

    def observe(self, own_q: float, opponent_q: float, raw_profit: float) -> None:
        action = self.q.nearest_action(own_q)
        ratio, self.norm = normalize_reward(raw_profit, self.norm)
        if self.reward == "running_max":
            reward = ratio
        else:
            self.payoffs[self.q.nearest_state(opponent_q), action] = raw_profit
            reward = expected_profit_reward(self.payoffs, action)
        simplified_update(self.q, self.state_index, action, reward, self.learning)
        self.estimated_opponent_action = float(opponent_q)
        self.steps_in_round += 1

    def advance(self, own_half: str, opponent_half: str) -> None:
        """Contract both known ranges and start a fresh round."""
        self.range = contract_range(self.range, own_half)
        self.opponent_range = contract_range(self.opponent_range, opponent_half)
        self.round_index += 1
        self._fresh_round()


Payoff = Callable[[float, float], tuple[float, float]]


def market_payoff(market: MarketParams, gx: GenCoParams, gy: GenCoParams) -> Payoff:
    def payoff(q_x: float, q_y: float) -> tuple[float, float]:
        return profit(gx, market, q_x, q_y), profit(gy, market, q_y, q_x)

    return payoff


class StepRecord(NamedTuple):
    round_index: int
    q_x: float
    q_y: float
    profit_x: float
    profit_y: float


@dataclass
class RoundRecord:
    round_index: int
    range_x: SearchRange
    range_y: SearchRange
    decision: QuadrantDecision
    iterations: int


def play_step(
    agent_x: DichotomyAgent, agent_y: DichotomyAgent, payoff: Payoff, rng: np.random.Generator
) -> StepRecord:
    """Both agents bid simultaneously, the market clears, and both learn."""
    q_x = agent_x.act(rng).quantity
    q_y = agent_y.act(rng).quantity
    r_x, r_y = payoff(q_x, q_y)
    agent_x.observe(q_x, q_y, r_x)
    agent_y.observe(q_y, q_x, r_y)
    return StepRecord(agent_x.round_index, q_x, q_y, r_x, r_y)


def _as_payoff(market: MarketParams | Payoff, gx: GenCoParams, gy: GenCoParams) -> Payoff:
    return market_payoff(market, gx, gy) if isinstance(market, MarketParams) else market


def run_round(
    agent_x: DichotomyAgent,
    agent_y: DichotomyAgent,
    market: MarketParams | Payoff,
    threshold: float = 0.9,
    max_inner_iterations: int = 200,
    rng: np.random.Generator | None = None,
    budget: int | None = None,
) -> tuple[QuadrantDecision, int, list[StepRecord]]:
    """Learn on the current 2x2 tables until a quadrant fires, then contract.

    ``market`` may be a :class:`MarketParams` or any callable mapping
    ``(q_x, q_y)`` to ``(profit_x, profit_y)``. If ``max_inner_iterations``
    pass without a firing quadrant, the largest paired Q-sum is used. If
    ``budget`` runs out first, the round is abandoned: the decision is
    ``None`` and neither range changes.
    """
    if not 0 < threshold < 1:
        raise DomainError(f"threshold must be in (0, 1), got {threshold}")
    rng = rng if rng is not None else np.random.default_rng()
    payoff = _as_payoff(market, agent_x.genco, agent_y.genco)
    limit = max_inner_iterations if budget is None else min(budget, max_inner_iterations)
    records = []
    decision = QuadrantDecision(None)
    for _ in range(limit):
        records.append(play_step(agent_x, agent_y, payoff, rng))
        decision = select_quadrant(agent_x.q, agent_y.q, threshold)
        if decision.quadrant is not None:
            break
    else:
        if limit < max_inner_iterations:
            return decision, len(records), records
        decision = fallback_quadrant(agent_x.q, agent_y.q)
    agent_x.advance(decision.x_half, decision.y_half)
    agent_y.advance(decision.y_half, decision.x_half)
    return decision, len(records), records


@dataclass
class SearchResult:
    final_bid_x: float
    final_bid_y: float
    rounds: list[RoundRecord]
    steps: list[StepRecord]
    completed: bool


def search_finished(agent_x: DichotomyAgent, agent_y: DichotomyAgent, stop_width: float) -> bool:
    return agent_x.range.width <= stop_width and agent_y.range.width <= stop_width


def run_search(
    agent_x: DichotomyAgent,
    agent_y: DichotomyAgent,
    market: MarketParams | Payoff,
    stop_width: float = 8.0,
    max_rounds: int = 12,
    rng: np.random.Generator | None = None,
    threshold: float = 0.9,
    max_inner_iterations: int = 200,
    max_iterations: int | None = None,
) -> SearchResult:
    """Run rounds until both ranges are at most ``stop_width`` wide.

    Stops early after ``max_rounds`` rounds or ``max_iterations`` market
    iterations in total. Final bids are the midpoints of the final ranges.
    """
    if not stop_width > 0:
        raise DomainError(f"stop_width must be > 0, got {stop_width}")
    rng = rng if rng is not None else np.random.default_rng()
    payoff = _as_payoff(market, agent_x.genco, agent_y.genco)
    rounds: list[RoundRecord] = []
    steps: list[StepRecord] = []
    while len(rounds) < max_rounds and not search_finished(agent_x, agent_y, stop_width):
        budget = None if max_iterations is None else max_iterations - len(steps)
        if budget is not None and budget <= 0:
            break
        rx, ry, idx = agent_x.range, agent_y.range, agent_x.round_index
        decision, n, recs = run_round(
            agent_x, agent_y, payoff, threshold, max_inner_iterations, rng, budget
        )
        steps.extend(recs)
        if decision.quadrant is None:
            break
        rounds.append(RoundRecord(idx, rx, ry, decision, n))
    return SearchResult(
        agent_x.range.mid,
        agent_y.range.mid,
        rounds,
        steps,
        search_finished(agent_x, agent_y, stop_width),
    )
