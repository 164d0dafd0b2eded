"""Strategy tables, payoff schemes and best-strategy selection."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels as K


class PayoffScheme(enum.IntEnum):
    WEALTH = K.WEALTH
    MINORITY = K.MINORITY
    DOLLAR = K.DOLLAR
    MAJORITY = K.MAJORITY

    @classmethod
    def parse(cls, name: str | PayoffScheme) -> PayoffScheme:
        if isinstance(name, PayoffScheme):
            return name
        aliases = {"$": "dollar", "$-game": "dollar"}
        key = aliases.get(str(name).lower(), str(name).lower())
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown payoff scheme {name!r}") from None


@dataclass(frozen=True)
class Strategy:
    """Lookup table of 2**m decisions indexed by the history state."""

    table: np.ndarray
    id: int = 0

    @property
    def memory(self) -> int:
        return int(self.table.size).bit_length() - 1

    def decide(self, state: int) -> int:
        return int(self.table[state])


@dataclass(frozen=True)
class StrategyScore:
    virtual_wealth: float = 0.0
    virtual_position: int = 0
    last_action: int = 0


@dataclass(frozen=True)
class ZeroStrategy:
    """Extra always-hold candidate earning `interest_rate` per step."""

    enabled: bool = False
    interest_rate: float = 0.0


def gen_strategy(rng: np.random.Generator, m: int, require_buy_sell: bool = True,
                 id: int = 0) -> Strategy:
    """Draw 2**m decisions uniformly from {-1, 0, +1}.

    With `require_buy_sell` the draw is repeated until the table holds at least
    one buy and one sell.
    """
    if m < 1:
        raise ValueError("memory must be >= 1")
    while True:
        table = rng.integers(-1, 2, size=1 << m).astype(np.int8)
        if not require_buy_sell or ((table > 0).any() and (table < 0).any()):
            return Strategy(table, id)


def gen_tables(rng: np.random.Generator, n_agents: int, s: int, m: int,
               require_buy_sell: bool = True) -> np.ndarray:
    """Stack n_agents * s independent strategies into an int8 array (n, s, 2**m)."""
    out = np.empty((n_agents, s, 1 << m), dtype=np.int8)
    for i in range(n_agents):
        for j in range(s):
            out[i, j] = gen_strategy(rng, m, require_buy_sell).table
    return out


def select_strategy(scores, zero_strategy: ZeroStrategy | None = None,
                    rng: np.random.Generator | None = None,
                    zero_score: float = 0.0) -> int:
    """Index of the best-scoring strategy, ties broken uniformly at random.

    `scores` holds StrategyScore objects or plain virtual wealths. When the
    0-strategy is enabled it competes with score `zero_score` and is returned
    as index len(scores).
    """
    values = np.array([getattr(x, "virtual_wealth", x) for x in scores], dtype=np.float64)
    enabled = bool(zero_strategy is not None and zero_strategy.enabled)
    if values.size == 0 and not enabled:
        raise ValueError("no candidate strategies")
    u = rng.random() if rng is not None else 0.0
    return int(K.pick_best(values, enabled, float(zero_score), u))


def update_score(scheme: PayoffScheme, score: StrategyScore, decision: int,
                 price_now: float, price_next: float, pt_now: float, pt_prev: float,
                 max_position: int) -> StrategyScore:
    """Apply one step of the scheme's payoff to a strategy's virtual account.

    Wealth: the pre-step virtual position earns the transaction-price change,
    then the position moves by the (clamped) decision. Minority and Majority
    score the current decision against the price change; Dollar scores the
    previous decision.
    """
    scheme = PayoffScheme.parse(scheme)
    d_price = price_next - price_now
    d_pt = pt_now - pt_prev
    if scheme is PayoffScheme.WEALTH:
        k = score.virtual_position
        gain = K.score_delta(K.WEALTH, decision, 0, k, d_price, d_pt)
        step = int(K.clamp(k, decision, max_position))
        return replace(score, virtual_wealth=score.virtual_wealth + gain,
                       virtual_position=k + step, last_action=decision)
    gain = K.score_delta(int(scheme), decision, score.last_action, 0, d_price, d_pt)
    return replace(score, virtual_wealth=score.virtual_wealth + gain, last_action=decision)


def write_strategies(path: str | Path, tables: np.ndarray) -> None:
    """Write an (n, s, 2**m) table stack as CSV rows: agent, slot, d_0 .. d_{2^m-1}."""
    n, s, width = tables.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "slot"] + [f"d{c}" for c in range(width)])
        for i in range(n):
            for j in range(s):
                w.writerow([i, j] + [int(x) for x in tables[i, j]])


def read_strategies(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = [[int(x) for x in r] for r in rows[1:]]
    n = max(r[0] for r in body) + 1
    s = max(r[1] for r in body) + 1
    out = np.zeros((n, s, len(rows[0]) - 2), dtype=np.int8)
    for r in body:
        out[r[0], r[1]] = r[2:]
    return out
