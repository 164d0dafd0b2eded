"""Flat `key = value` configuration with dotted section names.

A file looks like::

    seed = 7
    model.gamma = 0.8
    spread.kind = fixed
    sweep.gamma = 0.2, 0.5, 0.8

Every key is declared in SCHEMA with a type and a default; unknown keys and
unparsable values raise ConfigError naming the key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

_ROOT = "root"


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    f = float(text)
    if f != int(f):
        raise ValueError(f"not an integer: {text!r}")
    return int(f)


def _list(conv: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        items = [x.strip() for x in text.split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(x) for x in items)
    parse.__name__ = f"list[{conv.__name__}]"
    return parse


def _opt_str(text: str) -> str | None:
    t = text.strip()
    return None if t.lower() in ("", "none") else t


def _opt_float(text: str) -> float | None:
    t = text.strip()
    return None if t.lower() in ("", "none") else float(t)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str = ""


SCHEMA: dict[str, Key] = {
    "seed": Key(_int, 0, "master seed"),
    "paper_scale": Key(_bool, False, "N=1000, 1e6 steps, 100 samples"),
    "model.n_agents": Key(_int, 100),
    "model.memory": Key(_int, 3),
    "model.strategies": Key(_int, 2),
    "model.max_position": Key(_int, 1),
    "model.gamma": Key(float, 0.5, "price sensitivity"),
    "model.beta": Key(float, 0.5, "market impact"),
    "model.interest_rate": Key(float, 0.0),
    "model.zero_strategy": Key(_bool, False),
    "model.require_buy_sell": Key(_bool, True),
    "model.initial_price": Key(float, 0.0),
    "model.scheme": Key(str, "wealth"),
    "model.count_clamped": Key(_bool, False),
    "model.spread_in_scores": Key(_bool, False),
    "model.clearing": Key(str, "market_maker"),
    "run.steps": Key(_int, 100_000),
    "run.record_agents": Key(_int, 0),
    "run.transient": Key(float, 0.2),
    "spread.kind": Key(str, "none", "none | fixed | rate | adaptive"),
    "spread.size": Key(float, 0.0),
    "spread.rate": Key(float, 0.0, "fixed rate, or initial rate when adaptive"),
    "spread.eta": Key(float, 1e-5),
    "spread.target": Key(float, 0.0),
    "sweep.gamma": Key(_list(float), (0.2, 0.5, 0.8)),
    "sweep.beta": Key(_list(float), (0.2, 0.5, 0.8)),
    "sweep.K": Key(_list(_int), (3,)),
    "sweep.N": Key(_list(_int), (100,)),
    "sweep.samples": Key(_int, 50),
    "sweep.steps": Key(_int, 100_000),
    "sweep.transient": Key(float, 0.2),
    "sweep.workers": Key(_int, 0, "0 = all cores"),
    "evolve.period": Key(_int, 1000),
    "evolve.horizon": Key(_int, 10_000),
    "evolve.newcomer": Key(str, "zero"),
    "evolve.eviction": Key(str, "poorest"),
    "evolve.samples": Key(_int, 50),
    "evolve.adaptive_spread": Key(_bool, True),
    "evolve.workers": Key(_int, 0),
    "backtest.file": Key(_opt_str, None),
    "backtest.close_column": Key(str, "close"),
    "backtest.date_column": Key(str, "date"),
    "backtest.start": Key(_opt_str, None),
    "backtest.end": Key(_opt_str, None),
    "backtest.synthetic": Key(str, "none", "none | trend | rugged"),
    "backtest.length": Key(_int, 5000, "days of a synthetic series"),
    "backtest.scheme": Key(str, "wealth"),
    "backtest.m": Key(_int, 3),
    "backtest.s": Key(_int, 2),
    "backtest.beta": Key(float, 0.5),
    "backtest.position_mode": Key(str, "fixed", "fixed | wealth"),
    "backtest.K": Key(_int, 3),
    "backtest.initial_wealth": Key(_opt_float, None),
    "backtest.require_buy_sell": Key(_bool, True),
    "backtest.n_agents": Key(_int, 1000),
    "backtest.random_control": Key(_bool, False),
    "backtest.trajectories": Key(_bool, False),
}


def _coerce(key: str, raw: str) -> Any:
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    try:
        return SCHEMA[key].parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"bad value {raw!r} ({exc})") from None


def parse_text(text: str) -> dict[str, Any]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (sweep.K vs sweep.N)
    try:
        cp.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).replace(f"[{_ROOT}]", "")) from None
    if cp.sections() != [_ROOT]:
        raise ConfigError("<file>", "section headers are not used; write dotted keys instead")
    return {k: _coerce(k, v) for k, v in cp[_ROOT].items()}


def resolve(path: str | Path | None = None, overrides: list[str] | None = None) -> dict[str, Any]:
    """Defaults, then the file, then `key=value` overrides."""
    cfg = {k: v.default for k, v in SCHEMA.items()}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("--config", f"file not found: {p}")
        cfg.update(parse_text(p.read_text()))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = (x.strip() for x in item.split("=", 1))
        cfg[k] = _coerce(k, v)
    return cfg


def to_jsonable(cfg: dict[str, Any]) -> dict[str, Any]:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())}
