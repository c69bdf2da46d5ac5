"""Two-player Cournot market: clearing price, producer cost and profit.

Prices follow the linear inverse demand ``lambda - alpha * (q1 + q2)`` and
are never clamped, so oversupplied markets clear at negative prices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of a market operation."""


@dataclass(frozen=True)
class MarketParams:
    """Inverse-demand curve ``price = lam - alpha * total_quantity``."""

    lam: float
    alpha: float

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise DomainError(f"demand slope alpha must be > 0, got {self.alpha}")
        if not self.lam > 0:
            raise DomainError(f"price intercept lambda must be > 0, got {self.lam}")


@dataclass(frozen=True)
class GenCoParams:
    """Quadratic cost ``a*q**2 + b*q + c`` and generation cap of one producer."""

    a: float
    b: float
    c: float
    p_max: float
    name: str = ""

    def __post_init__(self) -> None:
        if self.a < 0:
            raise DomainError(f"quadratic cost coefficient must be >= 0, got {self.a}")
        if not self.p_max > 0:
            raise DomainError(f"generation cap must be > 0, got {self.p_max}")


@dataclass(frozen=True)
class Bid:
    quantity: float

    def __post_init__(self) -> None:
        if self.quantity < 0:
            raise DomainError(f"bid quantity must be >= 0, got {self.quantity}")

    def check_cap(self, genco: GenCoParams) -> "Bid":
        if self.quantity > genco.p_max:
            raise DomainError(
                f"bid {self.quantity} exceeds cap {genco.p_max} of {genco.name or 'GenCo'}"
            )
        return self


def clear_price(market: MarketParams, q1: float, q2: float) -> float:
    """Market-clearing price for the two supplied quantities.

    Raises:
        DomainError: if either quantity is negative.
    """
    if q1 < 0 or q2 < 0:
        raise DomainError(f"quantities must be non-negative, got {q1}, {q2}")
    return market.lam - market.alpha * (q1 + q2)


def gen_cost(g: GenCoParams, q: float) -> float:
    """Total production cost of ``q`` MW for producer ``g``."""
    if q < 0 or q > g.p_max:
        raise DomainError(f"quantity {q} outside [0, {g.p_max}]")
    return g.a * q * q + g.b * q + g.c


def profit(g: GenCoParams, market: MarketParams, q_own: float, q_other: float) -> float:
    """Profit of ``g`` after clearing: revenue at the market price minus cost."""
    return q_own * clear_price(market, q_own, q_other) - gen_cost(g, q_own)


def perturb_lambda(
    base: MarketParams, spread: float, rng: np.random.Generator
) -> MarketParams:
    """Copy of ``base`` with the intercept drawn uniformly from ``lam +/- spread``."""
    if spread < 0:
        raise DomainError(f"spread must be >= 0, got {spread}")
    if spread == 0:
        return base
    lam = float(rng.uniform(base.lam - spread, base.lam + spread))
    # uniform() is half-open; keep the closed-interval contract under rounding
    lam = min(max(lam, base.lam - spread), base.lam + spread)
    return replace(base, lam=lam)
