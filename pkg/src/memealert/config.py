"""Pipeline configuration read from a flat ``key = value`` file.

Example::

    tickers = GME, AMC
    meme_tickers = GME, AMC
    threads.GME = dumps/gme.jsonl
    market.GME = market/gme.csv
    index = market/sp500.csv
    activity = forum_totals.csv
    exogenous = exogenous.csv
    window_I = 10
    estimation = -20, -11

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Optional

from .alert_engine import AlertConfig
from .event_study import EventStudyConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    tickers: tuple[str, ...]
    threads: dict[str, Path]
    market: dict[str, Path]
    activity: Path
    index: Optional[Path] = None
    exogenous: Optional[Path] = None
    meme_tickers: tuple[str, ...] = ("GME", "AMC")
    start_date: Optional[date] = None
    end_date: Optional[date] = None
    alert: AlertConfig = AlertConfig()
    events: EventStudyConfig = EventStudyConfig()
    regression_specs: tuple[Path, ...] = ()
    ar_mode: str = "rolling"
    ar_window: int = 10
    out_dir: Path = Path("runs")
    seed: int = 0
    strict_paper: bool = False
    base_dir: Path = field(default=Path("."), compare=False)

    def run_id(self) -> str:
        """Stable id derived from the effective settings, not the wall clock."""
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return "run-" + hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self) -> Path:
        return self.out_dir / self.run_id()

    def describe(self) -> dict:
        def rel(p):
            if p is None:
                return None
            try:
                return str(Path(p).resolve().relative_to(self.base_dir.resolve()))
            except ValueError:
                return str(p)

        return {
            "tickers": list(self.tickers),
            "meme_tickers": list(self.meme_tickers),
            "threads": {k: rel(v) for k, v in sorted(self.threads.items())},
            "market": {k: rel(v) for k, v in sorted(self.market.items())},
            "activity": rel(self.activity),
            "index": rel(self.index),
            "exogenous": rel(self.exogenous),
            "start_date": str(self.start_date) if self.start_date else None,
            "end_date": str(self.end_date) if self.end_date else None,
            "alert": dataclasses.asdict(self.alert),
            "events": dataclasses.asdict(self.events),
            "regression_specs": [rel(p) for p in self.regression_specs],
            "ar_mode": self.ar_mode,
            "ar_window": self.ar_window,
            "seed": self.seed,
            "strict_paper": self.strict_paper,
        }


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(","))


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def strict_paper_overrides(alert: AlertConfig, events: EventStudyConfig):
    """Most literal reading of the method, for sensitivity runs."""
    return (dataclasses.replace(alert, mad="signed"),
            dataclasses.replace(events, estimation=(-21, -11), rank_order="descending"))


def parse_config(text: str, base_dir: Path = Path("."), overrides: Optional[dict] = None,
                 strict_paper: bool = False) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[pipeline]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    kv = dict(cp["pipeline"])
    kv.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})

    def path(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    tickers = _list(kv.pop("tickers", ""))
    if not tickers:
        raise ConfigError("config must list at least one ticker in 'tickers'")
    threads, market = {}, {}
    for key in list(kv):
        if key.startswith("threads."):
            threads[key.split(".", 1)[1]] = path(kv.pop(key))
        elif key.startswith("market."):
            market[key.split(".", 1)[1]] = path(kv.pop(key))
    for t in tickers:
        if t not in threads or t not in market:
            raise ConfigError(f"ticker {t} needs both threads.{t} and market.{t}")
    if "activity" not in kv:
        raise ConfigError("config must name the forum-wide 'activity' totals file")

    alert_fields = {f.name: f.type for f in dataclasses.fields(AlertConfig)}
    alert_kw = {}
    events_kw = {}
    kwargs = {}
    try:
        for key in list(kv):
            value = kv[key]
            name = key.split(".", 1)[1] if key.startswith(("alert.", "events.")) else key
            if name in alert_fields:
                default = getattr(AlertConfig(), name)
                alert_kw[name] = (_bool(value) if isinstance(default, bool)
                                  else type(default)(value))
            elif name in ("estimation", "event_window"):
                lo, hi = _ints(value)
                events_kw["estimation" if name == "estimation" else "event"] = (lo, hi)
            elif name in ("spacing", "post_days"):
                events_kw[name] = int(value)
            elif name in ("spacing_unit", "rank_scope", "rank_order"):
                events_kw[name] = value.strip()
            elif name == "meme_tickers":
                kwargs[name] = _list(value)
            elif name in ("activity", "index", "exogenous", "out_dir"):
                kwargs[name] = path(value)
            elif name in ("start_date", "end_date"):
                kwargs[name] = date.fromisoformat(value.strip())
            elif name == "regression_specs":
                kwargs[name] = tuple(path(p) for p in _list(value))
            elif name == "ar_mode":
                kwargs[name] = value.strip()
            elif name in ("ar_window", "seed"):
                kwargs[name] = int(value)
            elif name == "strict_paper":
                strict_paper = strict_paper or _bool(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None

    alert = AlertConfig(**alert_kw)
    events = EventStudyConfig(**events_kw)
    if strict_paper:
        alert, events = strict_paper_overrides(alert, events)
    if events.spacing_unit not in ("calendar", "trading"):
        raise ConfigError("spacing_unit must be 'calendar' or 'trading'")
    if kwargs.get("ar_mode", "rolling") not in ("rolling", "full"):
        raise ConfigError("ar_mode must be 'rolling' or 'full'")
    return PipelineConfig(tickers=tickers, threads=threads, market=market, alert=alert,
                          events=events, strict_paper=strict_paper, base_dir=base_dir,
                          **kwargs)


def load_config(path, overrides: Optional[dict] = None, strict_paper: bool = False) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent, overrides, strict_paper)
