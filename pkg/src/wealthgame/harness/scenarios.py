"""Turn a resolved configuration into runs and write their artifacts."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from itertools import product
from pathlib import Path
from typing import Any

import numpy as np

from .. import __version__
from ..backtest import (BacktestConfig, PriceSeries, load_series, rugged_series, run_backtest,
                        trending_series)
from ..core import ModelParams, simulate
from ..evolution import EvolutionConfig, run_evolution, survival_curve, write_survival_csv
from ..market_maker import SpreadPolicy
from ..metrics import (Attractor, ClassifierConfig, MetricsWindow, PhasePointSummary,
                       summarize_run, tail_exponent)
from .config import to_jsonable
from .seeding import RNG_ALGORITHM, derive_seed

log = logging.getLogger("wealthgame")

PAPER_SCALE = {"model.n_agents": 1000, "run.steps": 1_000_000, "sweep.N": (1000,),
               "sweep.steps": 1_000_000, "sweep.samples": 100}

SWEEP_COLUMNS = [
    "point", "gamma", "beta", "K", "N", "samples", "wealth_gain_per_step", "wealth_gain_se",
    "predictability", "volatility", "attractor",
] + [f"p_{a.value}" for a in Attractor] + ["tail_exponent"]


def apply_paper_scale(cfg: dict[str, Any]) -> dict[str, Any]:
    if not cfg.get("paper_scale"):
        return cfg
    log.warning("paper scale requested: N=1000, 1e6 steps, 100 samples; expect hours per point")
    return {**cfg, **PAPER_SCALE}


def params_from(cfg: dict[str, Any], seed: int, gamma: float | None = None,
                beta: float | None = None, K: int | None = None, N: int | None = None) -> ModelParams:
    return ModelParams(
        n_agents=cfg["model.n_agents"] if N is None else N,
        memory=cfg["model.memory"],
        strategies_per_agent=cfg["model.strategies"],
        max_position=cfg["model.max_position"] if K is None else K,
        price_sensitivity=cfg["model.gamma"] if gamma is None else gamma,
        market_impact=cfg["model.beta"] if beta is None else beta,
        interest_rate=cfg["model.interest_rate"],
        zero_strategy=cfg["model.zero_strategy"],
        require_buy_sell=cfg["model.require_buy_sell"],
        initial_price=cfg["model.initial_price"],
        seed=seed,
        scheme=cfg["model.scheme"],
        count_clamped=cfg["model.count_clamped"],
        spread_in_scores=cfg["model.spread_in_scores"],
    )


def spread_from(cfg: dict[str, Any]) -> SpreadPolicy:
    kind = cfg["spread.kind"].lower()
    if kind == "none":
        return SpreadPolicy.none()
    if kind == "fixed":
        return SpreadPolicy.fixed(cfg["spread.size"])
    if kind == "rate":
        return SpreadPolicy.fixed_rate(cfg["spread.rate"])
    if kind == "adaptive":
        return SpreadPolicy.adaptive(cfg["spread.rate"], cfg["spread.eta"], cfg["spread.target"])
    from .config import ConfigError
    raise ConfigError("spread.kind", f"unknown kind {kind!r}")


def write_json(path: Path, obj: Any) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_meta(out: Path, command: str, cfg: dict[str, Any]) -> None:
    write_json(out / "meta.json", {
        "command": command,
        "config": to_jsonable(cfg),
        "seed": cfg["seed"],
        "rng": RNG_ALGORITHM,
        "version": __version__,
    })


def _workers(n: int) -> int:
    return n if n > 0 else (os.cpu_count() or 1)


# ------------------------------------------------------------------- run
def do_run(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    params = params_from(cfg, cfg["seed"])
    rec = simulate(params, cfg["run.steps"], spread_from(cfg), cfg["model.clearing"],
                   record_agents=cfg["run.record_agents"])
    rec.to_csv(out / "steps.csv")
    if rec.agent_wealth is not None:
        with open(out / "agents.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "agent", "action", "position", "cash", "wealth"])
            for r in range(rec.agent_wealth.shape[0]):
                for i in range(params.n_agents):
                    w.writerow([rec.agent_start + r, i, int(rec.agent_action[r, i]),
                                int(rec.agent_position[r, i]), repr(float(rec.agent_cash[r, i])),
                                repr(float(rec.agent_wealth[r, i]))])
    summary = summarize_run(rec, cfg["run.transient"])
    result = {k: (v.value if isinstance(v, Attractor) else v) for k, v in asdict(summary).items()}
    write_json(out / "summary.json", result)
    return result


# ----------------------------------------------------------------- sweep
def sweep_points(cfg: dict[str, Any]) -> list[tuple[int, float, float, int, int]]:
    grid = product(cfg["sweep.K"], cfg["sweep.N"], cfg["sweep.gamma"], cfg["sweep.beta"])
    return [(i, g, b, k, n) for i, (k, n, g, b) in enumerate(grid)]


def run_point(cfg: dict[str, Any], point: tuple[int, float, float, int, int]) -> PhasePointSummary:
    idx, g, b, k, n = point
    steps, samples = cfg["sweep.steps"], cfg["sweep.samples"]
    clearing, spread = cfg["model.clearing"], spread_from(cfg)
    gains, hs, sigmas, pooled = [], [], [], []
    counts = {a.value: 0 for a in Attractor}
    for s in range(samples):
        params = params_from(cfg, derive_seed(cfg["seed"], idx, s), g, b, k, n)
        rec = simulate(params, steps, spread, clearing)
        summ = summarize_run(rec, cfg["sweep.transient"], ClassifierConfig())
        gains.append(summ.wealth_gain_per_step)
        hs.append(summ.predictability)
        sigmas.append(summ.volatility)
        counts[summ.attractor.value] += 1
        win = MetricsWindow.after_transient(steps, cfg["sweep.transient"])
        pooled.append(rec.price_changes[win.slice()])
    dp = np.concatenate(pooled)
    try:
        tail = tail_exponent(dp) if np.count_nonzero(dp) > 1000 else None
    except ValueError:
        tail = None
    gains = np.array(gains)
    se = float(gains.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return PhasePointSummary(g, b, k, n, samples, float(gains.mean()), se,
                             float(np.mean(hs)), float(np.mean(sigmas)), counts, tail)


def _point_row(idx: int, p: PhasePointSummary) -> list:
    total = sum(p.attractor_counts.values())
    return ([idx, repr(p.gamma), repr(p.beta), p.K, p.N, p.samples, repr(p.wealth_gain_per_step),
             repr(p.wealth_gain_se), repr(p.predictability), repr(p.volatility), p.attractor.value]
            + [repr(p.attractor_counts[a.value] / total) for a in Attractor]
            + ["" if p.tail_exponent is None else repr(p.tail_exponent)])


def _point_job(args):
    cfg, point = args
    return point[0], _point_row(point[0], run_point(cfg, point))


def do_sweep(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    """Run every grid point; rows are flushed to sweep.partial.csv as points finish.

    Re-running into the same directory with the same configuration skips
    points already in the partial file.
    """
    points = sweep_points(cfg)
    partial = out / "sweep.partial.csv"
    done: dict[int, list[str]] = {}
    if partial.exists():
        meta = out / "meta.json"
        old = json.loads(meta.read_text())["config"] if meta.exists() else None
        if old != to_jsonable(cfg):
            raise RuntimeError(f"{partial} belongs to a different configuration; use a fresh --out")
        with open(partial, newline="") as fh:
            rows = list(csv.reader(fh))
        done = {int(r[0]): r for r in rows[1:] if len(r) == len(SWEEP_COLUMNS)}
    write_meta(out, "sweep", cfg)
    todo = [p for p in points if p[0] not in done]
    with open(partial, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not done:
            fh.seek(0)
            fh.truncate()
            w.writerow(SWEEP_COLUMNS)
        n_workers = min(_workers(cfg["sweep.workers"]), max(len(todo), 1))
        jobs = [(cfg, p) for p in todo]
        if n_workers == 1:
            results = map(_point_job, jobs)
        else:
            pool = ProcessPoolExecutor(n_workers)
            results = pool.map(_point_job, jobs)
        for idx, row in results:
            w.writerow(row)
            fh.flush()
            done[idx] = [str(x) for x in row]
            log.info("sweep point %d/%d done", len(done), len(points))
        if n_workers != 1:
            pool.shutdown()
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for p in points:
            w.writerow(done[p[0]])
    partial.unlink()
    return {"points": len(points)}


# ---------------------------------------------------------------- evolve
def _evolve_job(args):
    cfg, sample = args
    params = params_from(cfg, derive_seed(cfg["seed"], 0, sample))
    evo = EvolutionConfig(cfg["evolve.period"], cfg["evolve.horizon"],
                          cfg["evolve.newcomer"], cfg["evolve.eviction"])
    # an explicit spread.kind wins; otherwise the adaptive default unless disabled
    if cfg["spread.kind"].lower() == "none" and cfg["evolve.adaptive_spread"]:
        spread = None
    else:
        spread = spread_from(cfg)
    return run_evolution(params, evo, spread)[0]


def do_evolve(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    jobs = [(cfg, s) for s in range(cfg["evolve.samples"])]
    n_workers = min(_workers(cfg["evolve.workers"]), len(jobs))
    if n_workers == 1:
        logs = list(map(_evolve_job, jobs))
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            logs = list(pool.map(_evolve_job, jobs))
    points = survival_curve(logs)
    write_survival_csv(out / "survival.csv", points)
    result = {"samples": len(logs), "founders_survival": points[0].empirical_p,
              "founders_baseline": points[0].baseline_p}
    write_json(out / "summary.json", result)
    return result


# -------------------------------------------------------------- backtest
def series_from(cfg: dict[str, Any]) -> PriceSeries:
    kind = cfg["backtest.synthetic"].lower()
    if cfg["backtest.file"]:
        series = load_series(cfg["backtest.file"], cfg["backtest.close_column"],
                             cfg["backtest.date_column"], cfg["backtest.m"] + 2)
        if cfg["backtest.start"] or cfg["backtest.end"]:
            series = series.between(cfg["backtest.start"], cfg["backtest.end"])
        return series
    if kind == "trend":
        return trending_series(cfg["backtest.length"], seed=cfg["seed"])
    if kind == "rugged":
        return rugged_series(cfg["backtest.length"], seed=cfg["seed"])
    from .config import ConfigError
    raise ConfigError("backtest.file", "give a CSV file or backtest.synthetic = trend | rugged")


def do_backtest(cfg: dict[str, Any], out: Path) -> dict[str, Any]:
    series = series_from(cfg)
    bc = BacktestConfig(
        scheme=cfg["backtest.scheme"], m=cfg["backtest.m"], s=cfg["backtest.s"],
        beta=cfg["backtest.beta"], position_mode=cfg["backtest.position_mode"],
        K=cfg["backtest.K"], initial_wealth=cfg["backtest.initial_wealth"],
        require_buy_sell=cfg["backtest.require_buy_sell"], n_agents=cfg["backtest.n_agents"],
        seed=cfg["seed"], random_control=cfg["backtest.random_control"],
    )
    res = run_backtest(series, bc, keep_trajectories=cfg["backtest.trajectories"])
    res.summary.to_json(out / "summary.json")
    if res.trajectories is not None:
        res.trajectories_to_csv(out / "trajectories.csv")
    return asdict(res.summary)


COMMANDS = {"run": do_run, "sweep": do_sweep, "evolve": do_evolve, "backtest": do_backtest}
