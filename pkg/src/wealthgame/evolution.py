"""Open markets: periodic replacement of the poorest agent and survival bookkeeping."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .core import Market, ModelParams, RunRecord
from .market_maker import SpreadPolicy
from .strategies import gen_strategy


class NewcomerWealth(enum.Enum):
    ZERO = "zero"
    MARKET_AVERAGE = "market_average"

    @classmethod
    def parse(cls, name: str | NewcomerWealth) -> NewcomerWealth:
        if isinstance(name, NewcomerWealth):
            return name
        key = str(name).lower().replace("-", "_")
        aliases = {"average": "market_average", "marketaverage": "market_average"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown newcomer wealth mode {name!r}") from None


class EvictionMode(enum.Enum):
    POOREST = "poorest"
    # statistical control: evict a uniformly random agent
    RANDOM = "random"


@dataclass(frozen=True)
class EvolutionConfig:
    period: int = 1000
    horizon: int = 10_000
    newcomer_wealth: NewcomerWealth = NewcomerWealth.ZERO
    eviction: EvictionMode = EvictionMode.POOREST

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("evolution period must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "newcomer_wealth", NewcomerWealth.parse(self.newcomer_wealth))
        object.__setattr__(self, "eviction", EvictionMode(self.eviction))


@dataclass(frozen=True)
class Replacement:
    step: int
    exited_id: int
    exited_wealth: float
    entrant_id: int
    entrant_wealth: float


@dataclass
class SurvivalLog:
    """Entry times of the agents alive at the horizon, plus every replacement."""

    n_agents: int
    horizon: int
    period: int
    entry_times: np.ndarray
    replacements: list[Replacement] = field(default_factory=list)

    @property
    def survivors_at_T(self) -> dict[int, int]:
        t, c = np.unique(self.entry_times, return_counts=True)
        return {int(a): int(b) for a, b in zip(t, c)}

    @property
    def entry_schedule(self) -> list[int]:
        """Times at which entrants could appear: 0 for founders, then every period."""
        return [0] + list(range(self.period, self.horizon + 1, self.period))


def replace_poorest(market: Market, step: int, config: EvolutionConfig,
                    rng: np.random.Generator) -> Replacement:
    """Evict the poorest agent (ties at random) and seat a newcomer.

    The market maker takes over the exiting position at the last transaction
    price, so only the wealth difference w_exit - w_new crosses the boundary.
    """
    if step <= 0 or step % config.period:
        raise ValueError(f"step {step} is not an eviction step for period {config.period}")
    if step != market.time:
        raise ValueError(f"market is at t={market.time}, eviction requested for t={step}")
    p = market.params
    n = p.n_agents
    if config.eviction is EvictionMode.RANDOM:
        i = int(rng.integers(n))
    else:
        low = np.flatnonzero(market.wealth == market.wealth.min())
        i = int(low[rng.integers(low.size)]) if low.size > 1 else int(low[0])
    w_exit = float(market.wealth[i])
    if config.newcomer_wealth is NewcomerWealth.MARKET_AVERAGE:
        w_new = float(market.wealth.sum() / n)
    else:
        w_new = 0.0

    pt = market.fstate[K.F_PT_PREV]
    k = int(market.position[i])
    hi, lo = K.two_sum_add(market.fstate[K.F_MM_CASH], market.fstate[K.F_MM_CASH_LO], -k * pt)
    market.fstate[K.F_MM_CASH], market.fstate[K.F_MM_CASH_LO] = hi, lo
    market.istate[K.I_MM_INV] += k
    market.fstate[K.F_TRANSFER] += w_exit - w_new

    for j in range(p.strategies_per_agent):
        market.tables[i, j] = gen_strategy(market.strategy_rng, p.memory, p.require_buy_sell).table
    market.vwealth[i] = 0.0
    market.vpos[i] = 0
    market.vlast[i] = 0
    market.zscore[i] = 0.0
    market.position[i] = 0
    market.cash_hi[i] = w_new
    market.cash_lo[i] = 0.0
    market.wealth[i] = w_new
    exited = int(market.agent_ids[i])
    market.agent_ids[i] = market.next_id
    market.entry_time[i] = step
    market.next_id += 1
    return Replacement(step, exited, w_exit, int(market.agent_ids[i]), w_new)


def default_evolution_spread() -> SpreadPolicy:
    return SpreadPolicy.adaptive(0.0, 1e-5, 0.0)


def run_evolution(params: ModelParams, config: EvolutionConfig,
                  spread: SpreadPolicy | None = None,
                  keep_record: bool = False) -> tuple[SurvivalLog, RunRecord | None]:
    """Run an open market to the horizon, evicting before every multiple of the period.

    The eviction at t = horizon is included, so its entrant counts as a survivor.
    """
    market = Market.create(params, default_evolution_spread() if spread is None else spread)
    evict_rng = np.random.default_rng(np.random.SeedSequence(params.seed, spawn_key=(3,)))
    log = SurvivalLog(params.n_agents, config.horizon, config.period, market.entry_time)
    parts = []
    t = 0
    while t < config.horizon:
        chunk = min(config.period, config.horizon - t)
        rec = market.run(chunk)
        if keep_record:
            parts.append(rec)
        t += chunk
        if t % config.period == 0:
            log.replacements.append(replace_poorest(market, t, config, evict_rng))
    log.entry_times = market.entry_time.copy()
    return log, (RunRecord.concat(parts) if keep_record else None)


def random_baseline(entry_time: int, horizon: int, n_agents: int, period: int) -> float:
    """Survival probability under uniformly random eviction.

    Founders: (1-1/N)^(T/T_ev). Entrants at t > 0: (1-1/N)^((T-t)/T_ev) / N,
    i.e. survivors per seat of the market.
    """
    if not 0 <= entry_time <= horizon:
        raise ValueError("entry time outside [0, horizon]")
    q = 1.0 - 1.0 / n_agents
    if entry_time == 0:
        return q ** (horizon / period)
    return q ** ((horizon - entry_time) / period) / n_agents


@dataclass(frozen=True)
class SurvivalPoint:
    entry_time: int
    empirical_p: float
    baseline_p: float
    n_entrants: int
    survivors: int


def survival_curve(logs: list[SurvivalLog]) -> list[SurvivalPoint]:
    """Survivors at the horizon per entry time, per seat per sample.

    Dividing by N * samples puts founders and entrants on the same scale as
    `random_baseline` (founders: N entrants, entrants: one per eviction).
    """
    if not logs:
        raise ValueError("need at least one completed run")
    ref = logs[0]
    n, samples = ref.n_agents, len(logs)
    counts: dict[int, int] = {t: 0 for t in ref.entry_schedule}
    for log in logs:
        for t, c in log.survivors_at_T.items():
            counts[t] = counts.get(t, 0) + c
    out = []
    for t in sorted(counts):
        entrants = (n if t == 0 else 1) * samples
        out.append(SurvivalPoint(t, counts[t] / (n * samples),
                                 random_baseline(t, ref.horizon, n, ref.period),
                                 entrants, counts[t]))
    return out


def random_eviction_survival(n_agents: int, horizon: int, period: int, samples: int,
                             rng: np.random.Generator) -> list[SurvivalPoint]:
    """Monte Carlo of uniformly random eviction, without any market dynamics."""
    entry = np.zeros((samples, n_agents), dtype=np.int64)
    rows = np.arange(samples)
    for t in range(period, horizon + 1, period):
        entry[rows, rng.integers(n_agents, size=samples)] = t
    logs = [SurvivalLog(n_agents, horizon, period, e) for e in entry]
    return survival_curve(logs)


def bucket_compare(points: list[SurvivalPoint], n_agents: int,
                   n_buckets: int) -> list[tuple[int, int, float, float, float]]:
    """Pool entrant points (t > 0) into contiguous buckets of entry time.

    Returns (t_lo, t_hi, empirical, baseline, sigma) per bucket; sigma is the
    binomial standard error of the pooled empirical sum under the baseline.
    """
    pts = [p for p in points if p.entry_time > 0]
    out = []
    for chunk in np.array_split(np.arange(len(pts)), n_buckets):
        if chunk.size == 0:
            continue
        sel = [pts[c] for c in chunk]
        var = 0.0
        for p in sel:
            q = min(p.baseline_p * n_agents, 1.0)  # per-entrant survival
            var += q * (1.0 - q) / p.n_entrants / n_agents**2
        out.append((sel[0].entry_time, sel[-1].entry_time,
                    sum(p.empirical_p for p in sel), sum(p.baseline_p for p in sel),
                    float(np.sqrt(var))))
    return out


def write_survival_csv(path, points: list[SurvivalPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entry_time", "empirical_p", "baseline_p", "n_entrants"])
        for p in points:
            w.writerow([p.entry_time, repr(p.empirical_p), repr(p.baseline_p), p.n_entrants])
