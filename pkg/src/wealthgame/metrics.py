"""Price-stream statistics: predictability, volatility, attractor labels, tails, scaling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

DEFAULT_TRANSIENT = 0.2


class Attractor(str, enum.Enum):
    ARBITRAGEUR = "arbitrageur"
    TRENDSETTER = "trendsetter"
    IRREGULAR = "irregular"
    QUIET = "quiet"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class MetricsWindow:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad window [{self.start}, {self.end})")

    @classmethod
    def after_transient(cls, n_steps: int, transient: float = DEFAULT_TRANSIENT) -> MetricsWindow:
        return cls(int(math.floor(n_steps * transient)), n_steps)

    def slice(self) -> slice:
        return slice(self.start, self.end)


@dataclass(frozen=True)
class ClassifierConfig:
    """Thresholds that turn a price stream into an attractor label."""

    min_window: int = 1000
    period_window: int = 500
    cycle_window: int = 1000
    magnitude_tol: float = 0.10
    min_cycles: int = 2
    # |dP| below this counts as no price move
    zero_tol: float = 1e-9


@dataclass
class PhasePointSummary:
    gamma: float
    beta: float
    K: int
    N: int
    samples: int
    wealth_gain_per_step: float
    wealth_gain_se: float
    predictability: float
    volatility: float
    attractor_counts: dict[str, int] = field(default_factory=dict)
    tail_exponent: float | None = None

    @property
    def attractor(self) -> Attractor:
        """Most frequent label over the samples."""
        return Attractor(max(self.attractor_counts, key=self.attractor_counts.get))

    def attractor_probability(self, label: Attractor | str) -> float:
        total = sum(self.attractor_counts.values())
        return self.attractor_counts.get(Attractor(label).value, 0) / total if total else 0.0


def predictability(price_changes, histories, m: int) -> float:
    """Sum over states of rho(mu) * <dP | mu>^2, states never seen contribute 0."""
    dp = np.asarray(price_changes, dtype=np.float64)
    mu = np.asarray(histories, dtype=np.int64)
    if dp.size == 0:
        raise ValueError("empty window")
    if dp.shape != mu.shape:
        raise ValueError("price changes and histories must align")
    n_states = 1 << m
    counts = np.bincount(mu, minlength=n_states).astype(np.float64)
    sums = np.bincount(mu, weights=dp, minlength=n_states)
    seen = counts > 0
    cond_mean = sums[seen] / counts[seen]
    rho = counts[seen] / dp.size
    return float(np.sum(rho * cond_mean**2))


def volatility(price_changes) -> float:
    dp = np.asarray(price_changes, dtype=np.float64)
    if dp.size < 2:
        raise ValueError("volatility needs at least 2 samples")
    return float(np.std(dp))


def _runs(signs: np.ndarray) -> list[tuple[int, int, int]]:
    """(sign, start, length) for each maximal constant run."""
    edges = np.flatnonzero(np.diff(signs)) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [signs.size]))
    return [(int(signs[s]), int(s), int(e - s)) for s, e in zip(starts, ends)]


def _is_period_two(dp: np.ndarray, cfg: ClassifierConfig) -> bool:
    mag = np.abs(dp)
    scale = mag.max()
    if scale <= cfg.zero_tol:
        return False
    if np.any(mag <= cfg.zero_tol):
        return False
    if np.any(np.sign(dp[1:]) == np.sign(dp[:-1])):
        return False
    return bool(np.all(np.abs(mag - mag[0]) <= 1e-9 * max(1.0, scale)))


def trend_legs(price_changes, cfg: ClassifierConfig = ClassifierConfig()):
    """Split a stream into monotone legs separated by quiet plateaus.

    Returns (legs, ok): legs is a list of (sign, length, amplitude, plateau_after)
    for complete legs; ok is False if two opposite legs touch without a quiet step.
    """
    dp = np.asarray(price_changes, dtype=np.float64)
    signs = np.where(dp > cfg.zero_tol, 1, np.where(dp < -cfg.zero_tol, -1, 0))
    runs = _runs(signs)
    # drop partial runs at both ends
    runs = runs[1:-1]
    legs: list[list] = []
    ok = True
    pending_quiet = 0
    for sgn, start, length in runs:
        if sgn == 0:
            pending_quiet += length
            continue
        amp = float(np.abs(dp[start:start + length]).sum())
        if legs and legs[-1][0] == sgn:
            # same direction resumed after a pause: one leg
            legs[-1][1] += length + pending_quiet
            legs[-1][2] += amp
        else:
            if legs:
                if pending_quiet == 0:
                    ok = False
                legs[-1][3] = pending_quiet
            legs.append([sgn, length, amp, 0])
        pending_quiet = 0
    if legs and runs and runs[-1][0] != 0:
        legs.pop()  # the leg running into the window end may be cut short
    return [tuple(x) for x in legs], ok


def _is_trendsetter(dp: np.ndarray, m: int, cfg: ClassifierConfig) -> bool:
    legs, ok = trend_legs(dp, cfg)
    if not ok:
        return False
    ups = [x for x in legs if x[0] > 0]
    downs = [x for x in legs if x[0] < 0]
    if min(len(ups), len(downs)) < cfg.min_cycles:
        return False
    if any(x[1] < m or x[3] == 0 for x in legs[:-1]) or legs[-1][1] < m:
        return False
    for group in (ups, downs):
        amps = np.array([x[2] for x in group])
        if np.max(np.abs(amps - amps.mean())) >= cfg.magnitude_tol * amps.mean():
            return False
    return True


def classify_attractor(prices, m: int = 3, cfg: ClassifierConfig = ClassifierConfig()) -> Attractor:
    """Label a post-transient price window.

    Arbitrageur: the final `period_window` changes alternate in sign with
    constant magnitude. Trendsetter: the final `cycle_window` changes form
    rise and fall legs of at least m steps, each followed by a quiet plateau,
    with leg amplitudes within `magnitude_tol` of their mean. Quiet: no price
    change at all. Anything else is Irregular.
    """
    p = np.asarray(prices, dtype=np.float64)
    dp = np.diff(p)
    if dp.size < max(cfg.min_window, cfg.period_window, cfg.cycle_window):
        return Attractor.UNCLASSIFIED
    if np.all(np.abs(dp) <= cfg.zero_tol):
        return Attractor.QUIET
    if _is_period_two(dp[-cfg.period_window:], cfg):
        return Attractor.ARBITRAGEUR
    if _is_trendsetter(dp[-cfg.cycle_window:], m, cfg):
        return Attractor.TRENDSETTER
    return Attractor.IRREGULAR


def hill_exponent(values, top_fraction: float = 0.05) -> float:
    """Hill estimate of the survival-function tail index alpha (positive)."""
    x = np.sort(np.abs(np.asarray(values, dtype=np.float64)))[::-1]
    k = int(math.ceil(top_fraction * x.size))
    if k < 2 or k >= x.size:
        raise ValueError("not enough samples for the requested tail fraction")
    threshold = x[k]
    if threshold <= 0:
        raise ValueError("tail threshold is zero; too few non-zero samples")
    return float(k / np.sum(np.log(x[:k] / threshold)))


def tail_exponent(price_changes, top_fraction: float = 0.05, min_samples: int = 10_000) -> float:
    """Power-law exponent of the |dP| survival function, reported negative."""
    dp = np.asarray(price_changes, dtype=np.float64)
    if dp.size < min_samples:
        raise ValueError(f"tail estimate needs >= {min_samples} samples, got {dp.size}")
    return -hill_exponent(dp, top_fraction)


def rank_exponent(values, top_fraction: float = 0.05) -> float:
    """Cross-check: slope of log rank against log size over the top order statistics."""
    x = np.sort(np.abs(np.asarray(values, dtype=np.float64)))[::-1]
    k = int(math.ceil(top_fraction * x.size))
    top = x[:k]
    top = top[top > 0]
    ranks = np.arange(1, top.size + 1) / x.size
    slope = np.polyfit(np.log(top), np.log(ranks), 1)[0]
    return float(slope)


def excess_kurtosis(values) -> float:
    return float(stats.kurtosis(np.asarray(values, dtype=np.float64), fisher=True))


def wealth_gain_per_step(total_wealth, n_agents: int = 1, window: MetricsWindow | None = None) -> float:
    """Least-squares slope of the average wealth (total / n_agents) over the window."""
    w = np.asarray(total_wealth, dtype=np.float64)
    if window is not None:
        w = w[window.slice()]
    if w.size == 0:
        raise ValueError("empty window")
    if w.size == 1:
        return 0.0
    t = np.arange(w.size, dtype=np.float64)
    return float(np.polyfit(t, w / n_agents, 1)[0])


@dataclass(frozen=True)
class ScalingReport:
    gamma: float
    n_values: tuple[int, ...]
    predictability_slope: float
    volatility_slope: float

    @property
    def predictability_deviation(self) -> float:
        return self.predictability_slope - 2 * self.gamma

    @property
    def volatility_deviation(self) -> float:
        return self.volatility_slope - self.gamma


def scaling_check(n_values, predictabilities, volatilities, gamma: float) -> ScalingReport:
    """Log-log slopes of H and sigma against N; expected 2*gamma and gamma."""
    logn = np.log(np.asarray(n_values, dtype=np.float64))
    h_slope = np.polyfit(logn, np.log(np.asarray(predictabilities, dtype=np.float64)), 1)[0]
    s_slope = np.polyfit(logn, np.log(np.asarray(volatilities, dtype=np.float64)), 1)[0]
    return ScalingReport(gamma, tuple(int(n) for n in n_values), float(h_slope), float(s_slope))


@dataclass
class RunSummary:
    """Metrics of one run over its post-transient window."""

    wealth_gain_per_step: float
    predictability: float
    volatility: float
    attractor: Attractor
    excess_kurtosis: float
    final_average_wealth: float


def summarize_run(record, transient: float = DEFAULT_TRANSIENT,
                  cfg: ClassifierConfig = ClassifierConfig()) -> RunSummary:
    p = record.params
    win = MetricsWindow.after_transient(len(record), transient)
    dp = record.price_changes[win.slice()]
    prices = record.prices[win.start:]
    return RunSummary(
        wealth_gain_per_step=wealth_gain_per_step(record.total_agent_wealth, p.n_agents, win),
        predictability=predictability(dp, record.states[win.slice()], p.memory),
        volatility=volatility(dp),
        attractor=classify_attractor(prices, p.memory, cfg),
        excess_kurtosis=excess_kurtosis(dp) if np.std(dp) > 0 else 0.0,
        final_average_wealth=float(record.total_agent_wealth[-1] / p.n_agents),
    )
