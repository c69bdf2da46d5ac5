"""Ground-truth Nash equilibria of the two-GenCo Cournot game.

``analytic_ne`` solves the first-order conditions of both profit functions
in closed form. ``brute_force_ne`` runs best-response iteration on discrete
quantity grids and never touches that derivation, so the two can be used to
check each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gencoq.market_env import GenCoParams, MarketParams, clear_price, profit


class DegenerateMarketError(ArithmeticError):
    """The first-order-condition system is singular."""


class BestResponseCycleError(RuntimeError):
    """Best-response iteration failed to reach a fixed point."""

    def __init__(self, message: str, last_iterates: tuple[tuple[float, float], tuple[float, float]]):
        super().__init__(message)
        self.last_iterates = last_iterates


@dataclass(frozen=True)
class NashPoint:
    q_x: float
    q_y: float
    price: float
    profit_x: float
    profit_y: float
    interior: bool

    @classmethod
    def at(
        cls,
        market: MarketParams,
        gx: GenCoParams,
        gy: GenCoParams,
        q_x: float,
        q_y: float,
        interior: bool,
    ) -> "NashPoint":
        return cls(
            q_x=q_x,
            q_y=q_y,
            price=clear_price(market, q_x, q_y),
            profit_x=profit(gx, market, q_x, q_y),
            profit_y=profit(gy, market, q_y, q_x),
            interior=interior,
        )

    def as_dict(self) -> dict:
        return {
            "q_x": self.q_x,
            "q_y": self.q_y,
            "price": self.price,
            "profit_x": self.profit_x,
            "profit_y": self.profit_y,
            "interior": self.interior,
        }


def best_response(market: MarketParams, g: GenCoParams, q_other: float) -> float:
    """Unconstrained profit-maximizing quantity against ``q_other``."""
    return (market.lam - g.b - market.alpha * q_other) / (2.0 * (market.alpha + g.a))


def analytic_ne(market: MarketParams, gx: GenCoParams, gy: GenCoParams) -> NashPoint:
    """Closed-form equilibrium, with clamp-and-re-solve when a cap or zero binds.

    The interior candidate solves

        2(alpha + a_x) q_x + alpha q_y = lam - b_x
        alpha q_x + 2(alpha + a_y) q_y = lam - b_y
    """
    al = market.alpha
    m = np.array([[2.0 * (al + gx.a), al], [al, 2.0 * (al + gy.a)]])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if det == 0:
        raise DegenerateMarketError("first-order conditions are singular")
    rx, ry = market.lam - gx.b, market.lam - gy.b
    q_x = (rx * m[1, 1] - m[0, 1] * ry) / det
    q_y = (m[0, 0] * ry - rx * m[1, 0]) / det
    if 0 <= q_x <= gx.p_max and 0 <= q_y <= gy.p_max:
        return NashPoint.at(market, gx, gy, float(q_x), float(q_y), True)

    # clipped best responses contract with factor <= 1/4 per sweep
    q_x = float(np.clip(q_x, 0, gx.p_max))
    q_y = float(np.clip(q_y, 0, gy.p_max))
    for _ in range(200):
        new_x = float(np.clip(best_response(market, gx, q_y), 0, gx.p_max))
        new_y = float(np.clip(best_response(market, gy, new_x), 0, gy.p_max))
        done = new_x == q_x and new_y == q_y
        q_x, q_y = new_x, new_y
        if done:
            break
    return NashPoint.at(market, gx, gy, q_x, q_y, False)


def quantity_grid(p_max: float, step: float) -> np.ndarray:
    """``{0, step, 2*step, ...}`` up to ``p_max``; the cap is appended if off-grid."""
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    n = int(np.floor(p_max / step + 1e-9))
    grid = step * np.arange(n + 1, dtype=float)
    if p_max - grid[-1] > 1e-9 * max(1.0, p_max):
        grid = np.append(grid, p_max)
    return grid


def _grid_argmax(market: MarketParams, g: GenCoParams, grid: np.ndarray, q_other: float) -> float:
    price = market.lam - market.alpha * (grid + q_other)
    values = grid * price - (g.a * grid * grid + g.b * grid + g.c)
    # exact ties (up to rounding) go to the smallest quantity
    best = values.max()
    tied = np.flatnonzero(values >= best - 1e-12 * max(1.0, abs(best)))
    return float(grid[tied[0]])


def brute_force_ne(
    market: MarketParams,
    gx: GenCoParams,
    gy: GenCoParams,
    step: float = 1.0,
    max_sweeps: int = 1000,
) -> NashPoint:
    """Alternating grid best responses from ``(0, 0)`` until a sweep changes nothing.

    Raises:
        BestResponseCycleError: if no fixed point is reached in ``max_sweeps``.
    """
    grid_x = quantity_grid(gx.p_max, step)
    grid_y = quantity_grid(gy.p_max, step)
    q_x, q_y = 0.0, 0.0
    prev = (q_x, q_y)
    for _ in range(max_sweeps):
        new_x = _grid_argmax(market, gx, grid_x, q_y)
        new_y = _grid_argmax(market, gy, grid_y, new_x)
        if new_x == q_x and new_y == q_y:
            br_x = best_response(market, gx, q_y)
            br_y = best_response(market, gy, q_x)
            interior = 0 <= br_x <= gx.p_max and 0 <= br_y <= gy.p_max
            return NashPoint.at(market, gx, gy, q_x, q_y, interior)
        prev, (q_x, q_y) = (q_x, q_y), (new_x, new_y)
    raise BestResponseCycleError(
        f"no best-response fixed point after {max_sweeps} sweeps", (prev, (q_x, q_y))
    )


def deviation_gain(
    market: MarketParams,
    gx: GenCoParams,
    gy: GenCoParams,
    point: NashPoint,
    step: float = 0.1,
) -> tuple[float, float]:
    """Largest unilateral profit improvement for each player on a ``step`` grid."""
    gains = []
    for g, grid, own, other, base in (
        (gx, quantity_grid(gx.p_max, step), point.q_x, point.q_y, point.profit_x),
        (gy, quantity_grid(gy.p_max, step), point.q_y, point.q_x, point.profit_y),
    ):
        best = _grid_argmax(market, g, grid, other)
        gains.append(profit(g, market, best, other) - base)
    return gains[0], gains[1]
