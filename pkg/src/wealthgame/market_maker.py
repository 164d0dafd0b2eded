"""Clearing modes, bid-ask spread policies and market-maker accounting."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K


class SpreadKind(enum.IntEnum):
    NONE = K.SPREAD_NONE
    FIXED = K.SPREAD_FIXED
    RATE = K.SPREAD_RATE
    ADAPTIVE = K.SPREAD_ADAPTIVE


class ClearingMode(enum.IntEnum):
    MARKET_MAKER = K.CLEAR_MM
    MATCHED = K.CLEAR_MATCHED

    @classmethod
    def parse(cls, name: str | ClearingMode) -> ClearingMode:
        if isinstance(name, ClearingMode):
            return name
        key = str(name).lower().replace("-", "_")
        if key in ("market_maker", "mm"):
            return cls.MARKET_MAKER
        if key == "matched":
            return cls.MATCHED
        raise ValueError(f"unknown clearing mode {name!r}")


@dataclass(frozen=True)
class SpreadPolicy:
    """Half-spread rule. `rate` is the current R(t) for the adaptive policy."""

    kind: SpreadKind = SpreadKind.NONE
    size: float = 0.0
    rate: float = 0.0
    eta: float = 0.0
    target_wealth: float = 0.0

    def __post_init__(self):
        if self.size < 0 or self.rate < 0:
            raise ValueError("spread size and rate must be non-negative")
        if self.kind is SpreadKind.ADAPTIVE and self.eta <= 0:
            raise ValueError("adaptive spread needs eta > 0")

    @classmethod
    def none(cls) -> SpreadPolicy:
        return cls()

    @classmethod
    def fixed(cls, size: float) -> SpreadPolicy:
        return cls(SpreadKind.FIXED, size=size)

    @classmethod
    def fixed_rate(cls, rate: float) -> SpreadPolicy:
        return cls(SpreadKind.RATE, rate=rate)

    @classmethod
    def adaptive(cls, initial_rate: float, eta: float, target_wealth: float = 0.0) -> SpreadPolicy:
        return cls(SpreadKind.ADAPTIVE, rate=initial_rate, eta=eta, target_wealth=target_wealth)


@dataclass(frozen=True)
class MarketMakerState:
    wealth: float = 0.0
    inventory: int = 0
    cash: float = 0.0
    current_rate: float = 0.0


def compute_spread(policy: SpreadPolicy, transaction_price: float, total_agent_wealth: float,
                   n_agents: int) -> tuple[float, SpreadPolicy]:
    """Half-spread S for this step and the policy to use next step.

    The adaptive rate moves by eta/N times (target + total agent wealth) and
    is floored at zero.
    """
    if policy.kind is SpreadKind.NONE:
        return 0.0, policy
    if policy.kind is SpreadKind.FIXED:
        return policy.size, policy
    spread = policy.rate * abs(transaction_price)
    if policy.kind is SpreadKind.RATE:
        return spread, policy
    nxt = policy.rate + policy.eta / n_agents * (policy.target_wealth + total_agent_wealth)
    return spread, replace(policy, rate=max(nxt, 0.0))


def clear_market_maker(actions) -> tuple[np.ndarray, int]:
    """The market maker takes the other side of the net order: everyone trades."""
    acts = np.asarray(actions, dtype=np.int64)
    return acts.copy(), int(acts.sum())


def clear_matched(actions, rng: np.random.Generator) -> tuple[np.ndarray, int, int]:
    """Match buyers against sellers without a market maker.

    A uniformly random subset of the majority side, as large as the minority
    side, trades; the rest are frustrated (effective action 0). The returned
    excess demand is the pre-match sum, which still moves the price.
    """
    acts = np.asarray(actions, dtype=np.int64)
    out = np.empty_like(acts)
    keys = rng.random(acts.size)
    n_frust = K.match_orders(acts, keys, out)
    return out, int(acts.sum()), int(n_frust)


def mm_settle(mm: MarketMakerState, effective_actions, transaction_price: float,
              spread: float, agent_wealth_total: float | None = None,
              tol: float = 1e-9) -> MarketMakerState:
    """Book the market maker's side of one step.

    If `agent_wealth_total` is given, the zero-sum identity with the agents is
    checked and a ValueError raised on violation.
    """
    acts = np.asarray(effective_actions, dtype=np.int64)
    net = int(acts.sum())
    cash = mm.cash + net * transaction_price + int(np.abs(acts).sum()) * spread
    inventory = mm.inventory - net
    wealth = cash + inventory * transaction_price
    if agent_wealth_total is not None:
        gap = agent_wealth_total + wealth
        if abs(gap) > tol * max(1.0, abs(cash) + abs(inventory * transaction_price)):
            raise ValueError(f"zero-sum identity broken by {gap:.3e}")
    return replace(mm, cash=cash, inventory=inventory, wealth=wealth)
