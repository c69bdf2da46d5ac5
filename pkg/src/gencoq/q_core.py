"""Tabular Q-value machinery shared by both GenCo learners."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class PolicyError(ValueError):
    """Invalid temperature or malformed probability distribution."""


@dataclass
class QTable:
    """Dense state-by-action value table with labelled coordinates.

    States are the opponent's (estimated) quantities and actions the agent's
    own quantities, both in MW.
    """

    state_labels: np.ndarray
    action_labels: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.state_labels = np.asarray(self.state_labels, dtype=float)
        self.action_labels = np.asarray(self.action_labels, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        expected = (len(self.state_labels), len(self.action_labels))
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != labels {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Q-values must be finite")

    @classmethod
    def zeros(cls, state_labels: Sequence[float], action_labels: Sequence[float]) -> "QTable":
        return cls(state_labels, action_labels, np.zeros((len(state_labels), len(action_labels))))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> "QTable":
        return QTable(self.state_labels.copy(), self.action_labels.copy(), self.values.copy())

    def __getitem__(self, idx: tuple[int, int]) -> float:
        return float(self.values[idx])

    def _check(self, state: int, action: int) -> None:
        n_s, n_a = self.values.shape
        if not (0 <= state < n_s and 0 <= action < n_a):
            raise IndexError(f"(state={state}, action={action}) outside table of shape {(n_s, n_a)}")

    def nearest_state(self, quantity: float) -> int:
        """Index of the state label closest to ``quantity``; ties go to the lower label."""
        return _nearest(self.state_labels, quantity)

    def nearest_action(self, quantity: float) -> int:
        return _nearest(self.action_labels, quantity)


def _nearest(labels: np.ndarray, quantity: float) -> int:
    # argmin returns the first minimum, and labels are increasing
    return int(np.argmin(np.abs(labels - quantity)))


@dataclass(frozen=True)
class LearningParams:
    """Learning rate, discount and Softmax temperature schedule.

    The temperature is multiplied by ``temperature_decay`` after every
    iteration and never drops below ``min_temperature``.
    """

    learning_rate: float = 0.1
    discount: float = 0.0
    temperature: float = 0.2
    temperature_decay: float = 0.99
    min_temperature: float = 0.01
    epsilon: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.learning_rate <= 1:
            raise ValueError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 0 <= self.discount <= 1:
            raise ValueError(f"discount must be in [0, 1], got {self.discount}")
        if not self.temperature > 0 or not self.min_temperature > 0:
            raise ValueError("temperatures must be > 0")
        if not 0 < self.temperature_decay <= 1:
            raise ValueError(f"temperature_decay must be in (0, 1], got {self.temperature_decay}")
        if self.epsilon is not None and not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")

    def temperature_at(self, step: int) -> float:
        return max(self.temperature * self.temperature_decay**step, self.min_temperature)


@dataclass
class NormalizationState:
    """Running maximum of observed raw profit within one learning episode."""

    max_observed_profit: float = field(default=-np.inf)


def td_update(
    q: QTable, state: int, action: int, reward: float, next_state: int, p: LearningParams
) -> QTable:
    """One temporal-difference step on cell ``(state, action)``, in place."""
    q._check(state, action)
    q._check(next_state, 0)
    if not np.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    target = reward + p.discount * q.values[next_state].max()
    q.values[state, action] += p.learning_rate * (target - q.values[state, action])
    return q


def simplified_update(
    q: QTable, est_state: int, action: int, reward: float, p: LearningParams
) -> QTable:
    """Discount-free update ``Q <- Q + lr * (r - Q)``; ``p.discount`` is ignored."""
    q._check(est_state, action)
    if not np.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    # same expression as td_update with discount 0: r + 0.0 * max == r exactly
    target = reward + 0.0 * q.values[est_state].max()
    q.values[est_state, action] += p.learning_rate * (target - q.values[est_state, action])
    return q


def softmax_probabilities(q_row: Sequence[float], temperature: float) -> np.ndarray:
    """Boltzmann distribution over a row of Q-values.

    The row maximum is subtracted before exponentiation, so arbitrarily small
    temperatures do not overflow.
    """
    if not temperature > 0:
        raise PolicyError(f"temperature must be > 0, got {temperature}")
    row = np.asarray(q_row, dtype=float)
    if row.size == 0 or not np.all(np.isfinite(row)):
        raise PolicyError("Q-row must be non-empty and finite")
    z = np.exp((row - row.max()) / temperature)
    return z / z.sum()


def epsilon_greedy_probabilities(q_row: Sequence[float], epsilon: float) -> np.ndarray:
    """Alternative policy: uniform with probability ``epsilon``, else the first argmax."""
    row = np.asarray(q_row, dtype=float)
    p = np.full(row.size, epsilon / row.size)
    p[int(np.argmax(row))] += 1.0 - epsilon
    return p


def sample_action(probabilities: Sequence[float], rng: np.random.Generator) -> int:
    """Draw an index with the given probabilities using one uniform variate."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise PolicyError("malformed probability vector")
    if abs(p.sum() - 1.0) > 1e-9:
        raise PolicyError(f"probabilities sum to {p.sum()}, expected 1")
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), p.size - 1)


def normalize_reward(raw_profit: float, norm: NormalizationState) -> tuple[float, NormalizationState]:
    """Scale a raw profit onto [0, 1] by the episode's running maximum profit.

    Non-positive running maxima and negative profits both map to 0.
    """
    if not np.isfinite(raw_profit):
        raise ValueError(f"profit must be finite, got {raw_profit}")
    updated = NormalizationState(max(norm.max_observed_profit, raw_profit))
    m = updated.max_observed_profit
    if m <= 0:
        return 0.0, updated
    return min(max(raw_profit / m, 0.0), 1.0), updated
