"""Replay the payoff schemes against an exogenous daily close series."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .strategies import PayoffScheme, gen_tables


class SeriesError(ValueError):
    """Base class for problems with an input price series."""


class SeriesFileMissing(SeriesError, FileNotFoundError):
    pass


class SeriesColumnMissing(SeriesError):
    pass


class SeriesNonNumeric(SeriesError):
    pass


class SeriesNonPositive(SeriesError):
    pass


class SeriesTooShort(SeriesError):
    pass


@dataclass(frozen=True)
class PriceSeries:
    closes: np.ndarray
    dates: tuple[str, ...] | None = None

    def __post_init__(self):
        c = np.asarray(self.closes, dtype=np.float64)
        if c.ndim != 1:
            raise SeriesError("closes must be one-dimensional")
        bad = np.flatnonzero(~(c > 0))
        if bad.size:
            raise SeriesNonPositive(f"close at index {bad[0]} is not positive: {c[bad[0]]}")
        if self.dates is not None and len(self.dates) != c.size:
            raise SeriesError("dates and closes differ in length")
        object.__setattr__(self, "closes", c)

    def __len__(self) -> int:
        return self.closes.size

    def between(self, start: str | None = None, end: str | None = None) -> PriceSeries:
        """Sub-series with start <= date <= end (ISO strings compare lexically)."""
        if self.dates is None:
            raise SeriesError("date filtering needs a dated series")
        keep = [i for i, d in enumerate(self.dates)
                if (start is None or d >= start) and (end is None or d <= end)]
        return PriceSeries(self.closes[keep], tuple(self.dates[i] for i in keep))


def load_series(path: str | Path, close_column: str = "close",
                date_column: str | None = "date", min_length: int = 2) -> PriceSeries:
    """Read a CSV with a header row; sorted by date when a date column is present."""
    path = Path(path)
    if not path.is_file():
        raise SeriesFileMissing(f"price file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if close_column not in header:
            raise SeriesColumnMissing(f"column {close_column!r} not in {header}")
        use_dates = date_column is not None and date_column in header
        closes, dates = [], []
        for row_no, row in enumerate(reader, start=2):
            raw = (row.get(close_column) or "").strip()
            try:
                value = float(raw)
            except ValueError:
                raise SeriesNonNumeric(f"row {row_no}: close {raw!r} is not a number") from None
            if not math.isfinite(value):
                raise SeriesNonNumeric(f"row {row_no}: close {raw!r} is not finite")
            if value <= 0:
                raise SeriesNonPositive(f"row {row_no}: close {value} is not positive")
            closes.append(value)
            if use_dates:
                dates.append(row[date_column].strip())
    if len(closes) < min_length:
        raise SeriesTooShort(f"{len(closes)} rows, need at least {min_length}")
    if use_dates:
        order = sorted(range(len(dates)), key=dates.__getitem__)
        return PriceSeries(np.array(closes)[order], tuple(dates[i] for i in order))
    return PriceSeries(np.array(closes))


class PositionMode(enum.Enum):
    FIXED_K = "fixed"
    WEALTH_BASED = "wealth"


@dataclass(frozen=True)
class BacktestConfig:
    scheme: PayoffScheme = PayoffScheme.WEALTH
    m: int = 3
    s: int = 2
    beta: float = 0.5
    position_mode: PositionMode = PositionMode.FIXED_K
    K: int = 3
    # None: 5 * P(0) in wealth-based mode, 0 with a fixed K
    initial_wealth: float | None = None
    require_buy_sell: bool = True
    n_agents: int = 1000
    seed: int = 0
    random_control: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", PayoffScheme.parse(self.scheme))
        object.__setattr__(self, "position_mode", PositionMode(self.position_mode))
        if self.m < 1 or self.s < 1 or self.n_agents < 1:
            raise ValueError("m, s and n_agents must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.position_mode is PositionMode.FIXED_K and self.K < 1:
            raise ValueError("fixed position mode needs K >= 1")
        if (self.position_mode is PositionMode.WEALTH_BASED
                and self.initial_wealth is not None and self.initial_wealth <= 0):
            raise ValueError("wealth-based positions need initial_wealth > 0")

    def start_wealth(self, first_close: float) -> float:
        if self.initial_wealth is not None:
            return float(self.initial_wealth)
        return 5.0 * first_close if self.position_mode is PositionMode.WEALTH_BASED else 0.0


def wealth_based_K(wealth: float, price: float) -> int:
    """Integer part of max(w / P, 0)."""
    if price <= 0:
        raise ValueError("price must be positive")
    return int(math.floor(max(wealth / price, 0.0)))


@dataclass
class BacktestSummary:
    average_wealth: float
    best_wealth: float
    worst_wealth: float
    percent_gaining: float | None
    percent_bankrupt: float
    histogram_counts: list[int] = field(default_factory=list)
    histogram_edges: list[float] = field(default_factory=list)

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class BacktestResult:
    config: BacktestConfig
    final_wealth: np.ndarray
    final_position: np.ndarray
    initial_wealth: float
    summary: BacktestSummary
    trajectories: np.ndarray | None = None
    first_day: int = 0

    def trajectories_to_csv(self, path: str | Path) -> None:
        if self.trajectories is None:
            raise ValueError("run without trajectories")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n = self.trajectories.shape[0]
            w.writerow(["day"] + [f"agent{i}" for i in range(n)])
            for d in range(self.trajectories.shape[1]):
                w.writerow([self.first_day + d] + [repr(x) for x in self.trajectories[:, d].tolist()])


def history_states(closes: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """states[t] encodes the signs of the m daily changes ending at day t.

    A zero change contributes a random bit. Entries before day m are unused (0).
    """
    d = np.diff(closes)
    bits = np.where(d > 0, 1, 0)
    zero = d == 0
    if zero.any():
        bits[zero] = rng.integers(0, 2, size=int(zero.sum()))
    states = np.zeros(closes.size, dtype=np.int64)
    for t in range(m, closes.size):
        mu = 0
        for b in bits[t - m:t]:
            mu = (mu << 1) | int(b)
        states[t] = mu
    return states


def _agent_streams(seed: int, n: int, s: int, m: int, require: bool):
    tables = np.empty((n, s, 1 << m), dtype=np.int8)
    keys = np.empty(n, dtype=np.uint64)
    for i in range(n):
        ss = np.random.SeedSequence(seed, spawn_key=(4, i))
        tables[i] = gen_tables(np.random.default_rng(ss), 1, s, m, require)[0]
        keys[i] = ss.generate_state(1, np.uint64)[0]
    return tables, keys


def summarize(final_wealth: np.ndarray, initial_wealth: float, series: PriceSeries,
              wealth_based: bool, bins: int = 50) -> BacktestSummary:
    p0, pT = float(series.closes[0]), float(series.closes[-1])
    w = np.asarray(final_wealth, dtype=np.float64)
    norm = w / pT
    gaining = None
    if wealth_based:
        gain = w - initial_wealth > (pT / p0 - 1.0) * initial_wealth
        gaining = float(100.0 * gain.mean())
    counts, edges = np.histogram(norm, bins=bins)
    return BacktestSummary(
        average_wealth=float(norm.mean()), best_wealth=float(norm.max()),
        worst_wealth=float(norm.min()), percent_gaining=gaining,
        percent_bankrupt=float(100.0 * (w < 0).mean()),
        histogram_counts=counts.tolist(), histogram_edges=edges.tolist(),
    )


def run_backtest(series: PriceSeries, config: BacktestConfig,
                 keep_trajectories: bool = False) -> BacktestResult:
    """Each agent trades alone against the series from day m to the second-last day.

    Strategies and tie-break keys come from per-agent streams of the seed, so
    an agent's path does not depend on how many others run beside it.
    """
    closes = series.closes
    m = config.m
    if closes.size < m + 2:
        raise SeriesTooShort(f"series of {closes.size} days, need at least m + 2 = {m + 2}")
    hist_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(5,)))
    states = history_states(closes, m, hist_rng)
    tables, keys = _agent_streams(config.seed, config.n_agents, config.s, m, config.require_buy_sell)
    w0 = config.start_wealth(float(closes[0]))
    n_days = closes.size - 1 - m
    traj = np.zeros((config.n_agents, n_days) if keep_trajectories else (0, 0))
    final_w = np.zeros(config.n_agents)
    final_k = np.zeros(config.n_agents, dtype=np.int64)
    fixed_k = config.K if config.position_mode is PositionMode.FIXED_K else -1
    K.run_exogenous(closes, states, m, tables, keys, int(config.scheme), config.beta,
                    fixed_k, w0, config.random_control, final_w, final_k, traj)
    summary = summarize(final_w, w0, series, config.position_mode is PositionMode.WEALTH_BASED)
    return BacktestResult(config, final_w, final_k, w0, summary,
                          traj if keep_trajectories else None, m)


def trending_series(n: int = 5000, drift: float = 4e-4, noise: float = 1e-2,
                    p0: float = 1000.0, seed: int = 0) -> PriceSeries:
    """Geometric random walk with positive drift; drift/noise sets the trend strength."""
    rng = np.random.default_rng(seed)
    steps = drift + noise * rng.standard_normal(n - 1)
    return PriceSeries(p0 * np.exp(np.concatenate(([0.0], np.cumsum(steps)))))


def rugged_series(n: int = 1200, amplitude: float = 0.8, noise: float = 1.5e-2,
                  p0: float = 1000.0, seed: int = 0) -> PriceSeries:
    """Two rises and two falls: log P = amplitude * sin^2(2 pi t / n) plus a random walk."""
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    base = amplitude * np.sin(2 * np.pi * t / n) ** 2
    walk = np.concatenate(([0.0], np.cumsum(noise * rng.standard_normal(n - 1))))
    return PriceSeries(p0 * np.exp(base + walk))
