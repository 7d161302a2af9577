"""Two-stage alert state machine.

Stage 1 watches six daily activity indicators for a ticker and switches on
when enough of them exceed their thresholds; once on it stays on until the
trailing three-day average of active indicators falls to ``off_mean``.
Stage 2 runs on stage-1 days only and looks for overlap between the day's
most central submitters and the PageRank influencers of the preceding window.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .data_ingest import ConversationTree, is_placeholder_user
from .social_graph import UserGraph, filtered_reduce, reduce_trees, top_k_by_indegree, windowed_pagerank

logger = logging.getLogger(__name__)

N_VARIABLES = 6
PCT_CHANGE_VARIABLES = (3, 6)
PCT_CHANGE_THRESHOLD = 1.0


class InsufficientHistoryError(ValueError):
    pass


class ActivityGapError(ValueError):
    pass


@dataclass(frozen=True)
class AlertConfig:
    window_I: int = 10
    min_flags: int = 4
    off_mean: float = 3.0
    off_days: int = 3
    pagerank_window: int = 20
    k_indegree: int = 10
    k_influencers: int = 20
    min_cascade: int = 10
    damping: float = 0.85
    tol: float = 1e-9
    max_iter: int = 200
    strict_median: bool = True
    filter_window: bool = True
    users_mode: str = "all"  # "all" | "submitters"
    mad: str = "absolute"  # "absolute" | "signed"


@dataclass(frozen=True)
class DailyActivity:
    day: date
    ticker: str
    ticker_submissions: int
    ticker_users: int
    total_submissions: int
    total_users: int
    ticker_comments: int = 0

    def __post_init__(self):
        if min(self.ticker_submissions, self.ticker_users, self.total_submissions,
               self.total_users, self.ticker_comments) < 0:
            raise ValueError(f"{self.day}: negative activity count")
        if self.ticker_submissions > self.total_submissions:
            raise ValueError(f"{self.day}: ticker submissions exceed forum total")
        if self.ticker_users > self.total_users:
            raise ValueError(f"{self.day}: ticker users exceed forum total")


def active_users(trees: Iterable[ConversationTree], mode: str = "all") -> set[str]:
    users: set[str] = set()
    for t in trees:
        users.add(t.submitter)
        if mode == "all":
            users.update(c.author for c in t.comments)
    return users


def daily_activity(trees_by_day: Mapping[date, Sequence[ConversationTree]],
                   totals: Mapping[date, tuple[int, int]], ticker: str,
                   users_mode: str = "all") -> list[DailyActivity]:
    """Aggregate per-day ticker activity against forum-wide totals.

    ``totals`` defines the calendar; a day without trees has zero ticker activity.
    """
    out = []
    for day in sorted(totals):
        trees = trees_by_day.get(day, ())
        subs, users = totals[day]
        out.append(DailyActivity(
            day=day,
            ticker=ticker,
            ticker_submissions=len(trees),
            ticker_users=len(active_users(trees, users_mode)),
            total_submissions=subs,
            total_users=users,
            ticker_comments=sum(t.n_comments for t in trees),
        ))
    return out


def pct_change(current: float, previous: Optional[float]) -> float:
    if previous is None:
        return math.nan
    if previous == 0:
        return math.inf if current > 0 else 0.0
    return (current - previous) / previous


def compute_variables(activity: DailyActivity,
                      previous: Optional[DailyActivity] = None) -> tuple[float, ...]:
    """The six indicator values, in order (1)..(6)."""
    a = activity
    rel_subs = a.ticker_submissions / a.total_submissions if a.total_submissions else 0.0
    rel_users = a.ticker_users / a.total_users if a.total_users else 0.0
    return (
        rel_subs,
        float(a.ticker_submissions),
        pct_change(a.ticker_submissions, previous.ticker_submissions if previous else None),
        rel_users,
        float(a.ticker_users),
        pct_change(a.ticker_users, previous.ticker_users if previous else None),
    )


def rolling_threshold(history: Sequence[float], variable: int = 1, window: int = 10,
                      mad: str = "absolute") -> Optional[float]:
    """Mean of the last ``window`` values plus their mean absolute deviation.

    Percentage-change variables (3 and 6) use the fixed 100% threshold.  Returns
    None while fewer than ``window`` values are available.
    """
    if variable in PCT_CHANGE_VARIABLES:
        return PCT_CHANGE_THRESHOLD
    if len(history) < window:
        return None
    x = np.asarray(history[-window:], dtype=float)
    mean = x.mean()
    dev = x - mean
    spread = np.abs(dev).mean() if mad == "absolute" else dev.mean()
    return float(mean + spread)


@dataclass(frozen=True)
class IndicatorSnapshot:
    day: date
    ticker: str
    values: tuple[float, ...]
    thresholds: tuple[Optional[float], ...]
    flags: tuple[int, ...]

    @classmethod
    def evaluate(cls, day: date, ticker: str, values: Sequence[float],
                 thresholds: Sequence[Optional[float]]) -> "IndicatorSnapshot":
        flags = tuple(
            int(t is not None and not math.isnan(v) and v > t)
            for v, t in zip(values, thresholds)
        )
        return cls(day, ticker, tuple(values), tuple(thresholds), flags)

    @property
    def active_count(self) -> int:
        return sum(self.flags)

    @property
    def warm(self) -> bool:
        return all(t is not None for t in self.thresholds)


@dataclass(frozen=True)
class AlertState:
    day: date
    ticker: str
    stage1_on: bool
    stage2_on: bool = False
    flagged_influencers: tuple[str, ...] = ()
    entered_on: Optional[date] = None
    snapshot: Optional[IndicatorSnapshot] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if self.stage2_on and not self.stage1_on:
            raise ValueError("stage 2 cannot be on while stage 1 is off")
        if bool(self.flagged_influencers) != self.stage2_on:
            raise ValueError("flagged influencers must be non-empty exactly when stage 2 is on")


def stage1_step(snapshot: IndicatorSnapshot, recent: Sequence, prior_on: bool,
                min_flags: int = 4, off_mean: float = 3.0, off_days: int = 3) -> bool:
    """Next stage-1 status.

    ``recent`` holds the snapshots (or active counts) of the days before
    ``snapshot.day``, oldest first; only the last ``off_days`` are used.
    """
    if not prior_on:
        return snapshot.warm and snapshot.active_count >= min_flags
    counts = [r if isinstance(r, (int, np.integer)) else r.active_count for r in recent]
    if len(counts) < off_days:
        return True
    return float(np.mean(counts[-off_days:])) > off_mean


def stage2_step(day: date, ticker: str, day_graph: UserGraph, window_graphs: Sequence[UserGraph],
                k_indegree: int = 10, k_influencers: int = 20, damping: float = 0.85,
                tol: float = 1e-9, max_iter: int = 200, entered_on: Optional[date] = None,
                snapshot: Optional[IndicatorSnapshot] = None) -> AlertState:
    def off(reason: str) -> AlertState:
        return AlertState(day, ticker, True, False, (), entered_on, snapshot, reason)

    if not day_graph.nodes:
        return off("empty_day_graph")
    hubs = top_k_by_indegree(day_graph, k_indegree, skip=is_placeholder_user)
    influencers = windowed_pagerank(window_graphs, k=k_influencers, damping=damping,
                                    tol=tol, max_iter=max_iter, day=day)
    if not influencers.members:
        return off("empty_window")
    members = set(influencers.users)
    flagged = tuple(u for u in hubs if u in members)
    if not flagged:
        return off("no_intersection")
    return AlertState(day, ticker, True, True, flagged, entered_on, snapshot, None)


def check_contiguous(days: Sequence[date]) -> None:
    missing = []
    for a, b in zip(days, days[1:]):
        if b <= a:
            raise ActivityGapError(f"activity days not strictly increasing at {b}")
        d = a + timedelta(days=1)
        while d < b:
            missing.append(d)
            d += timedelta(days=1)
    if missing:
        shown = ", ".join(map(str, missing[:10]))
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise ActivityGapError(f"missing activity for {len(missing)} day(s): {shown}{more}")


def run_alert_pipeline(activities: Sequence[DailyActivity],
                       trees_by_day: Mapping[date, Sequence[ConversationTree]],
                       config: AlertConfig = AlertConfig()) -> list[AlertState]:
    activities = sorted(activities, key=lambda a: a.day)
    check_contiguous([a.day for a in activities])
    if len(activities) < config.window_I + 1:
        raise InsufficientHistoryError(
            f"{len(activities)} day(s) of activity; at least {config.window_I + 1} needed")
    ticker = activities[0].ticker
    graphs: dict[tuple[date, bool], UserGraph] = {}

    def graph_for(day: date, filtered: bool) -> UserGraph:
        key = (day, filtered)
        if key not in graphs:
            trees = list(trees_by_day.get(day, ()))
            if filtered:
                graphs[key] = filtered_reduce(trees, config.min_cascade, config.strict_median,
                                              day=day, ticker=ticker)
            else:
                graphs[key] = reduce_trees(trees, day=day, ticker=ticker)
        return graphs[key]

    history: list[tuple[float, ...]] = []
    snapshots: list[IndicatorSnapshot] = []
    states: list[AlertState] = []
    prior_on = False
    entered: Optional[date] = None
    for i, act in enumerate(activities):
        values = compute_variables(act, activities[i - 1] if i else None)
        thresholds = tuple(
            rolling_threshold([h[v - 1] for h in history], v, config.window_I, config.mad)
            if (v in PCT_CHANGE_VARIABLES and i > 0) or len(history) >= config.window_I
            else None
            for v in range(1, N_VARIABLES + 1)
        )
        snap = IndicatorSnapshot.evaluate(act.day, ticker, values, thresholds)
        on = stage1_step(snap, snapshots[-config.off_days:], prior_on,
                         config.min_flags, config.off_mean, config.off_days)
        if on and not prior_on:
            entered = act.day
        if on:
            window = [graph_for(act.day - timedelta(days=j), config.filter_window)
                      for j in range(config.pagerank_window, 0, -1)]
            state = stage2_step(act.day, ticker, graph_for(act.day, True), window,
                                config.k_indegree, config.k_influencers, config.damping,
                                config.tol, config.max_iter, entered, snap)
        else:
            entered = None
            state = AlertState(act.day, ticker, False, snapshot=snap)
        states.append(state)
        snapshots.append(snap)
        history.append(values)
        prior_on = on
    n1 = sum(s.stage1_on for s in states)
    n2 = sum(s.stage2_on for s in states)
    logger.info("%s: %d stage-1 day(s), %d stage-2 day(s)", ticker, n1, n2)
    return states


def _fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(x, ".10g")


def write_alert_report(states: Iterable[AlertState], fh) -> None:
    fh.write("day,ticker,stage1,stage2,active_count,"
             + ",".join(f"flag{v}" for v in range(1, 7)) + ",influencers\n")
    for s in states:
        flags = s.snapshot.flags if s.snapshot else (0,) * 6
        count = s.snapshot.active_count if s.snapshot else 0
        fh.write(f"{s.day},{s.ticker},{int(s.stage1_on)},{int(s.stage2_on)},{count},"
                 + ",".join(map(str, flags)) + "," + ";".join(s.flagged_influencers) + "\n")


def write_indicator_audit(states: Iterable[AlertState], fh) -> None:
    cols = ([f"value{v}" for v in range(1, 7)] + [f"threshold{v}" for v in range(1, 7)]
            + [f"flag{v}" for v in range(1, 7)])
    fh.write("day,ticker," + ",".join(cols) + ",active_count,warm,stage1,stage2,reason\n")
    for s in states:
        snap = s.snapshot
        if snap is None:
            continue
        cells = ([_fmt(v) for v in snap.values] + [_fmt(t) for t in snap.thresholds]
                 + [str(f) for f in snap.flags])
        fh.write(f"{s.day},{s.ticker}," + ",".join(cells)
                 + f",{snap.active_count},{int(snap.warm)},{int(s.stage1_on)},"
                 f"{int(s.stage2_on)},{s.reason or ''}\n")


def read_alert_report(fh) -> list[tuple[date, bool, bool, tuple[str, ...]]]:
    """(day, stage1, stage2, influencers) rows from a report written above."""
    out = []
    for row in csv.DictReader(fh):
        infl = tuple(x for x in row["influencers"].split(";") if x)
        out.append((date.fromisoformat(row["day"]), row["stage1"] == "1",
                    row["stage2"] == "1", infl))
    return out
