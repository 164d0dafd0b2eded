"""Domain types and the single-step transition of the endogenous market."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _kernels as K
from .market_maker import ClearingMode, MarketMakerState, SpreadKind, SpreadPolicy
from .strategies import PayoffScheme, StrategyScore, ZeroStrategy, gen_tables

TOLERANCE = 1e-9


class SimulationFault(RuntimeError):
    """An invariant of the market (position bound, accounting, zero-sum) broke."""

    def __init__(self, code: int, time: int):
        names = {
            K.ERR_POSITION: "position bound |k| <= K violated",
            K.ERR_ACCOUNTING: "wealth != cash + position * P_T",
            K.ERR_ZERO_SUM: "agents + market maker wealth != 0",
        }
        super().__init__(f"{names.get(code, 'fault')} at t={time}")
        self.code = code
        self.time = time


class Decision(enum.IntEnum):
    SELL = -1
    HOLD = 0
    BUY = 1


@dataclass(frozen=True)
class ModelParams:
    n_agents: int = 100
    memory: int = 3
    strategies_per_agent: int = 2
    max_position: int = 1
    price_sensitivity: float = 0.5
    market_impact: float = 0.5
    interest_rate: float = 0.0
    zero_strategy: bool = False
    require_buy_sell: bool = True
    initial_price: float = 0.0
    seed: int = 0
    scheme: PayoffScheme = PayoffScheme.WEALTH
    # count clamped (ignored) bids in the excess demand; sensitivity switch
    count_clamped: bool = False
    # strategies' virtual accounts pay the half-spread on each virtual trade
    spread_in_scores: bool = False

    def __post_init__(self):
        for name in ("n_agents", "memory", "strategies_per_agent", "max_position"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("price_sensitivity", "market_impact"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.interest_rate < 0:
            raise ValueError("interest_rate must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "scheme", PayoffScheme.parse(self.scheme))

    @property
    def gamma(self) -> float:
        return self.price_sensitivity

    @property
    def beta(self) -> float:
        return self.market_impact


@dataclass(frozen=True)
class AgentState:
    strategy_handles: tuple[int, ...]
    scores: tuple[StrategyScore, ...]
    position: int = 0
    cash: float = 0.0
    wealth: float = 0.0
    active: bool = True


@dataclass(frozen=True)
class MarketState:
    price: float
    transaction_price: float
    history: str
    time: int
    excess_demand_last: int


@dataclass(frozen=True)
class StepRecord:
    time: int
    price_before: float
    price_after: float
    transaction_price: float
    excess_demand: int
    total_agent_wealth: float
    market_maker_wealth: float
    spread: float
    rate: float
    n_buyers: int
    n_sellers: int
    n_frustrated: int
    state: int


STEP_COLUMNS = [f.name for f in StepRecord.__dataclass_fields__.values()]


def price_update(price: float, excess_demand: int, gamma: float) -> float:
    """P + sign(A)|A|^gamma; zero demand leaves the price unchanged."""
    return float(K.price_step(float(price), int(excess_demand), float(gamma)))


def transaction_price(price_now: float, price_next: float, beta: float) -> float:
    return (1.0 - beta) * price_now + beta * price_next


def clamp_action(position: int, proposed: int, max_position: int) -> int:
    return int(K.clamp(int(position), int(proposed), int(max_position)))


def settle_agent(agent: AgentState, effective_action: int, transaction_price: float,
                 spread: float = 0.0) -> AgentState:
    """Buyers pay P_T + S, sellers receive P_T - S; wealth is marked at P_T."""
    a = int(effective_action)
    cash = agent.cash - a * transaction_price - abs(a) * spread
    position = agent.position + a
    return replace(agent, cash=cash, position=position,
                   wealth=cash + position * transaction_price)


@dataclass
class RunRecord:
    """Per-step series of one run, plus optional per-agent panels."""

    params: ModelParams
    rec_f: np.ndarray
    rec_i: np.ndarray
    agent_start: int = 0
    agent_position: np.ndarray | None = None
    agent_cash: np.ndarray | None = None
    agent_wealth: np.ndarray | None = None
    agent_action: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rec_f.shape[0]

    time = property(lambda self: self.rec_i[:, K.S_TIME])
    price_before = property(lambda self: self.rec_f[:, K.R_PRICE_BEFORE])
    price_after = property(lambda self: self.rec_f[:, K.R_PRICE_AFTER])
    transaction_price = property(lambda self: self.rec_f[:, K.R_PT])
    total_agent_wealth = property(lambda self: self.rec_f[:, K.R_TOTAL_W])
    market_maker_wealth = property(lambda self: self.rec_f[:, K.R_MM_W])
    spread = property(lambda self: self.rec_f[:, K.R_SPREAD])
    rate = property(lambda self: self.rec_f[:, K.R_RATE])
    excess_demand = property(lambda self: self.rec_i[:, K.S_A])
    n_buyers = property(lambda self: self.rec_i[:, K.S_BUY])
    n_sellers = property(lambda self: self.rec_i[:, K.S_SELL])
    n_frustrated = property(lambda self: self.rec_i[:, K.S_FRUST])
    states = property(lambda self: self.rec_i[:, K.S_STATE])

    @property
    def prices(self) -> np.ndarray:
        """P(t0) .. P(t_end), one longer than the record."""
        return np.append(self.price_before, self.price_after[-1:])

    @property
    def price_changes(self) -> np.ndarray:
        return self.price_after - self.price_before

    def step(self, r: int) -> StepRecord:
        f, i = self.rec_f[r], self.rec_i[r]
        return StepRecord(
            time=int(i[K.S_TIME]), price_before=float(f[K.R_PRICE_BEFORE]),
            price_after=float(f[K.R_PRICE_AFTER]), transaction_price=float(f[K.R_PT]),
            excess_demand=int(i[K.S_A]), total_agent_wealth=float(f[K.R_TOTAL_W]),
            market_maker_wealth=float(f[K.R_MM_W]), spread=float(f[K.R_SPREAD]),
            rate=float(f[K.R_RATE]), n_buyers=int(i[K.S_BUY]), n_sellers=int(i[K.S_SELL]),
            n_frustrated=int(i[K.S_FRUST]), state=int(i[K.S_STATE]),
        )

    def __iter__(self) -> Iterator[StepRecord]:
        return (self.step(r) for r in range(len(self)))

    def to_csv(self, path: str | Path) -> None:
        cols = [
            self.time, self.price_before, self.price_after, self.transaction_price,
            self.excess_demand, self.total_agent_wealth, self.market_maker_wealth,
            self.spread, self.rate, self.n_buyers, self.n_sellers, self.n_frustrated,
            self.states,
        ]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STEP_COLUMNS)
            for row in zip(*(c.tolist() for c in cols)):
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])

    @classmethod
    def concat(cls, parts: list[RunRecord]) -> RunRecord:
        return cls(parts[0].params, np.concatenate([p.rec_f for p in parts]),
                   np.concatenate([p.rec_i for p in parts]))


def _substream(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(index,))


def run_key(seed: int) -> int:
    """64-bit key for the in-kernel counter hash of a run."""
    return int(_substream(seed, 1).generate_state(1, np.uint64)[0])


@dataclass
class Market:
    """Mutable state of one endogenous market, stored as per-agent arrays.

    Strategies live in `tables` with shape (N, s, 2**m). Build with
    `Market.create`; step with `advance` or `run`.
    """

    params: ModelParams
    spread_policy: SpreadPolicy
    clearing: ClearingMode
    tables: np.ndarray
    key: int
    strategy_rng: np.random.Generator
    vwealth: np.ndarray = field(repr=False)
    vpos: np.ndarray = field(repr=False)
    vlast: np.ndarray = field(repr=False)
    zscore: np.ndarray = field(repr=False)
    position: np.ndarray = field(repr=False)
    cash_hi: np.ndarray = field(repr=False)
    cash_lo: np.ndarray = field(repr=False)
    wealth: np.ndarray = field(repr=False)
    fstate: np.ndarray = field(repr=False)
    istate: np.ndarray = field(repr=False)
    agent_ids: np.ndarray = field(repr=False)
    entry_time: np.ndarray = field(repr=False)
    next_id: int = 0

    @classmethod
    def create(cls, params: ModelParams, spread: SpreadPolicy | None = None,
               clearing: ClearingMode | str = ClearingMode.MARKET_MAKER,
               tables: np.ndarray | None = None) -> Market:
        spread = spread or SpreadPolicy.none()
        clearing = ClearingMode.parse(clearing)
        if clearing is ClearingMode.MATCHED and spread.kind is not SpreadKind.NONE:
            raise ValueError("matched clearing has no market maker to charge a spread")
        n, s, m = params.n_agents, params.strategies_per_agent, params.memory
        init_rng = np.random.default_rng(_substream(params.seed, 0))
        if tables is None:
            tables = gen_tables(init_rng, n, s, m, params.require_buy_sell)
        elif tables.shape != (n, s, 1 << m):
            raise ValueError(f"tables shape {tables.shape} != {(n, s, 1 << m)}")
        mu = int(init_rng.integers(0, 1 << m))
        fstate = np.zeros(K.N_FSTATE)
        fstate[K.F_PRICE] = params.initial_price
        fstate[K.F_PT_PREV] = params.initial_price
        fstate[K.F_RATE] = spread.rate
        istate = np.zeros(K.N_ISTATE, dtype=np.int64)
        istate[K.I_MU] = mu
        return cls(
            params=params, spread_policy=spread, clearing=clearing,
            tables=np.ascontiguousarray(tables, dtype=np.int8),
            key=run_key(params.seed),
            strategy_rng=np.random.default_rng(_substream(params.seed, 2)),
            vwealth=np.zeros((n, s)), vpos=np.zeros((n, s), dtype=np.int64),
            vlast=np.zeros((n, s), dtype=np.int64), zscore=np.zeros(n),
            position=np.zeros(n, dtype=np.int64), cash_hi=np.zeros(n), cash_lo=np.zeros(n),
            wealth=np.zeros(n),
            fstate=fstate, istate=istate,
            agent_ids=np.arange(n, dtype=np.int64), entry_time=np.zeros(n, dtype=np.int64),
            next_id=n,
        )

    # ----------------------------------------------------------------- views
    @property
    def time(self) -> int:
        return int(self.istate[K.I_TIME])

    @property
    def price(self) -> float:
        return float(self.fstate[K.F_PRICE])

    @property
    def state(self) -> MarketState:
        m = self.params.memory
        return MarketState(
            price=self.price,
            transaction_price=float(self.fstate[K.F_PT_PREV]),
            history=format(int(self.istate[K.I_MU]), f"0{m}b"),
            time=self.time,
            excess_demand_last=int(self.istate[K.I_LAST_A]),
        )

    @property
    def market_maker(self) -> MarketMakerState:
        pt = float(self.fstate[K.F_PT_PREV])
        inv = int(self.istate[K.I_MM_INV])
        cash = float(self.fstate[K.F_MM_CASH] + self.fstate[K.F_MM_CASH_LO])
        return MarketMakerState(wealth=cash + inv * pt, inventory=inv, cash=cash,
                                current_rate=float(self.fstate[K.F_RATE]))

    @property
    def cash(self) -> np.ndarray:
        return self.cash_hi + self.cash_lo

    @property
    def transfers(self) -> float:
        """Cumulative (exit wealth - entry wealth) across the open boundary."""
        return float(self.fstate[K.F_TRANSFER])

    def agent(self, i: int) -> AgentState:
        s = self.params.strategies_per_agent
        scores = tuple(
            StrategyScore(float(self.vwealth[i, j]), int(self.vpos[i, j]), int(self.vlast[i, j]))
            for j in range(s)
        )
        return AgentState(
            strategy_handles=tuple(int(self.agent_ids[i]) * s + j for j in range(s)),
            scores=scores, position=int(self.position[i]), cash=float(self.cash[i]),
            wealth=float(self.wealth[i]),
        )

    @property
    def agents(self) -> list[AgentState]:
        return [self.agent(i) for i in range(self.params.n_agents)]

    @property
    def zero(self) -> ZeroStrategy:
        return ZeroStrategy(self.params.zero_strategy, self.params.interest_rate)

    # ------------------------------------------------------------- stepping
    def _kernel_params(self) -> tuple[np.ndarray, np.ndarray]:
        p, sp = self.params, self.spread_policy
        prm_f = np.zeros(K.N_PRM_F)
        prm_f[K.P_GAMMA] = p.price_sensitivity
        prm_f[K.P_BETA] = p.market_impact
        prm_f[K.P_EPS] = p.interest_rate
        prm_f[K.P_SPREAD] = sp.size
        prm_f[K.P_RATE] = sp.rate
        prm_f[K.P_ETA] = sp.eta
        prm_f[K.P_TARGET] = sp.target_wealth
        prm_f[K.P_TOL] = TOLERANCE
        prm_i = np.zeros(K.N_PRM_I, dtype=np.int64)
        prm_i[K.Q_K] = p.max_position
        prm_i[K.Q_SCHEME] = int(p.scheme)
        prm_i[K.Q_ZERO] = int(p.zero_strategy)
        prm_i[K.Q_CLEARING] = int(self.clearing)
        prm_i[K.Q_COUNT_CLAMPED] = int(p.count_clamped)
        prm_i[K.Q_SPREAD_KIND] = int(sp.kind)
        prm_i[K.Q_M] = p.memory
        prm_i[K.Q_SPREAD_SCORES] = int(p.spread_in_scores)
        return prm_f, prm_i

    def run(self, steps: int, record_agents: int = 0) -> RunRecord:
        """Advance `steps` steps; keep per-agent panels for the last `record_agents`."""
        n = self.params.n_agents
        rec_f = np.zeros((steps, K.N_REC_F))
        rec_i = np.zeros((steps, K.N_REC_I), dtype=np.int64)
        w = min(record_agents, steps)
        ag_pos = np.zeros((w, n), dtype=np.int64)
        ag_cash = np.zeros((w, n))
        ag_wealth = np.zeros((w, n))
        ag_act = np.zeros((w, n), dtype=np.int8)
        ag_start = self.time + steps - w
        prm_f, prm_i = self._kernel_params()
        code, t = K.run_market(
            steps, np.uint64(self.key), self.tables, self.vwealth, self.vpos, self.vlast,
            self.zscore, self.position, self.cash_hi, self.cash_lo, self.wealth, self.fstate, self.istate,
            prm_f, prm_i, rec_f, rec_i, 0, ag_start, ag_pos, ag_cash, ag_wealth, ag_act,
        )
        if code != K.OK:
            raise SimulationFault(code, t)
        if self.spread_policy.kind is SpreadKind.ADAPTIVE:
            self.spread_policy = replace(self.spread_policy, rate=float(self.fstate[K.F_RATE]))
        rec = RunRecord(self.params, rec_f, rec_i)
        if w:
            rec.agent_start = ag_start
            rec.agent_position, rec.agent_cash = ag_pos, ag_cash
            rec.agent_wealth, rec.agent_action = ag_wealth, ag_act
        return rec

    def advance(self) -> StepRecord:
        """Execute exactly one step and return its record."""
        return self.run(1).step(0)


def advance(market: Market) -> StepRecord:
    return market.advance()


def simulate(params: ModelParams, steps: int, spread: SpreadPolicy | None = None,
             clearing: ClearingMode | str = ClearingMode.MARKET_MAKER,
             record_agents: int = 0) -> RunRecord:
    """Build a fresh market from `params` and run it for `steps` steps."""
    return Market.create(params, spread, clearing).run(steps, record_agents)
