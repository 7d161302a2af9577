"""Seeded synthetic scenario: forum dump, market data and exogenous series.

Quiet days carry a fixed number of ticker submissions and active users, so no
indicator fires on them.  On each planted burst day activity jumps by
``burst_multiplier`` and the planted influencer posts a large, high-scoring
thread.  The influencer also posts a well-received thread every other quiet
day, which keeps them among the PageRank leaders of any trailing window.
The stock drifts upward for ten trading days after every burst.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .alert_engine import AlertConfig
from .event_study import EventStudyConfig, next_trading_position


class InfeasibleScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class FixtureScenario:
    ticker: str = "GME"
    start: date = date(2021, 1, 4)
    n_days: int = 150
    burst_days: tuple[int, ...] = (30, 75, 120)
    burst_multiplier: int = 4
    quiet_submissions: int = 8
    quiet_users: int = 60
    deleted_per_day: int = 2
    commenter_pool: int = 600
    influencer: str = "PlantedInfluencer"
    influencer_every: int = 2
    influencer_comments: int = 30
    burst_influencer_comments: int = 150
    total_submissions: int = 1000
    total_users: int = 5000
    bot_rate: float = 0.3
    market_extra_days: int = 21
    post_event_drift: float = 0.03
    drift_days: int = 10
    alpha: float = 0.0005
    beta: float = 1.2
    noise: float = 0.01
    market_mu: float = 0.0004
    market_sigma: float = 0.01

    def days(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]


@dataclass
class Fixture:
    threads: list[dict]
    market: list[dict]
    index: list[dict]
    exogenous: list[dict]
    activity: list[dict]
    truth: dict = field(default_factory=dict)


def trading_calendar(start: date, n_days: int) -> list[date]:
    days = np.arange(np.datetime64(start), np.datetime64(start + timedelta(days=n_days)))
    return [d.astype(object) for d in days if np.is_busday(d)]


def check_feasible(s: FixtureScenario, alert: AlertConfig = AlertConfig(),
                   events: EventStudyConfig = EventStudyConfig()) -> list[date]:
    """Validate the scenario and return the trading calendar it implies."""
    if s.quiet_users < s.quiet_submissions + s.deleted_per_day + 1:
        raise InfeasibleScenarioError("quiet_users too small for the submissions")
    burst_users = s.quiet_users * s.burst_multiplier
    burst_subs = s.quiet_submissions * s.burst_multiplier
    if burst_users - burst_subs - s.deleted_per_day * s.burst_multiplier > s.commenter_pool:
        raise InfeasibleScenarioError("commenter pool smaller than burst-day commenters")
    if s.burst_influencer_comments > burst_users - burst_subs:
        raise InfeasibleScenarioError("influencer burst cascade exceeds available commenters")
    calendar = trading_calendar(s.start, s.n_days + s.market_extra_days)
    warmup = max(alert.window_I, alert.pagerank_window)
    bursts = sorted(s.burst_days)
    for b in bursts:
        if b <= warmup:
            raise InfeasibleScenarioError(f"burst on day {b} falls inside the {warmup}-day warm-up")
        if b >= s.n_days - 1:
            raise InfeasibleScenarioError(f"burst on day {b} is outside the {s.n_days}-day range")
        pos = next_trading_position(calendar, s.start + timedelta(days=b))
        if pos is None or pos + events.estimation[0] < 1 or pos + events.event[1] > len(calendar) - 1:
            raise InfeasibleScenarioError(f"burst on day {b} leaves no room for event windows")
    for a, b in zip(bursts, bursts[1:]):
        if b - a <= max(alert.window_I, events.spacing) + alert.off_days:
            raise InfeasibleScenarioError(f"bursts on days {a} and {b} are too close")
        # the drift after one episode must end before the next estimation window opens
        pa = next_trading_position(calendar, s.start + timedelta(days=a))
        pb = next_trading_position(calendar, s.start + timedelta(days=b))
        if pa + s.drift_days >= pb + events.estimation[0]:
            raise InfeasibleScenarioError(
                f"drift after the burst on day {a} overlaps the estimation window of day {b}")
    return calendar


def _iso(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%S+00:00")


def _thread_rows(rng, tree_id: str, author: str, title: str, score: int, posted: datetime,
                 commenters: list[str], flair: str, bot_rate: float) -> list[dict]:
    shared = {
        "submission_id": tree_id,
        "title": title,
        "author_name": author,
        "score_submission": score,
        "upvote_ratio": round(float(rng.uniform(0.6, 0.99)), 2),
        "time_submission": _iso(posted),
        "num_comment": len(commenters),
        "flair": flair,
    }
    rows = [{**shared, "depth": 0, "body": "", "name": None, "parent_id": None,
             "score": score, "distinguished": None}]
    ids = [tree_id]
    depth = {tree_id: 0}
    for j, who in enumerate(commenters):
        parent = ids[int(rng.integers(0, len(ids)))] if rng.random() < 0.4 else tree_id
        cid = f"t1_{tree_id[3:]}c{j}"
        depth[cid] = depth[parent] + 1
        rows.append({
            **shared,
            "body": "comment",
            "name": cid,
            "parent_id": parent,
            "author": who,
            "depth": depth[cid],
            "score": int(rng.integers(-5, 200)),
            "time_comment": _iso(posted + timedelta(minutes=5 * (j + 1))),
            "distinguished": None,
        })
        ids.append(cid)
    if rng.random() < bot_rate:
        rows.append({**shared, "body": "rules reminder", "name": f"t1_{tree_id[3:]}bot",
                     "parent_id": tree_id, "author": "AutoModerator", "depth": 1, "score": 1,
                     "time_comment": _iso(posted + timedelta(minutes=1)),
                     "distinguished": "moderator"})
    return rows


def _day_threads(rng, s: FixtureScenario, i: int, day: date, pool: list[str], burst: bool,
                 influencer_posts: bool) -> tuple[list[dict], tuple[int, int]]:
    """Thread rows for one day plus the (nodes, edges) its user graph must have."""
    mult = s.burst_multiplier if burst else 1
    n_subs = s.quiet_submissions * mult
    n_deleted = s.deleted_per_day * mult
    n_users = s.quiet_users * mult
    n_commenters = n_users - n_subs - n_deleted
    chosen = [pool[j] for j in sorted(rng.choice(len(pool), n_commenters, replace=False))]
    authors = [f"user_d{i:03d}_s{k:02d}" for k in range(n_subs)]
    if influencer_posts:
        authors[0] = s.influencer

    lo, hi = (10, 40) if burst else (3, 25)
    sizes = [int(rng.integers(lo, hi + 1)) for _ in range(n_subs)]
    if influencer_posts:
        sizes[0] = s.burst_influencer_comments if burst else s.influencer_comments
    cascades: list[list[str]] = [[] for _ in range(n_subs)]
    # every chosen commenter and deleted account appears at least once
    for j, who in enumerate(chosen):
        cascades[j % n_subs].append(who)
    for j in range(n_deleted):
        cascades[(j + 1) % n_subs].append("[deleted]")
    if influencer_posts:
        need = sizes[0] - len(cascades[0])
        extra = [c for c in chosen if c not in set(cascades[0])]
        pick = rng.choice(len(extra), min(need, len(extra)), replace=False) if need > 0 else []
        cascades[0].extend(extra[j] for j in sorted(pick))
    for k in range(n_subs):
        while len(cascades[k]) < sizes[k]:
            cascades[k].append(chosen[int(rng.integers(0, len(chosen)))])
        order = rng.permutation(len(cascades[k]))
        cascades[k] = [cascades[k][j] for j in order]

    rows = []
    for k, author in enumerate(authors):
        posted = datetime.combine(day, time(0, 0), tzinfo=timezone.utc) + timedelta(minutes=30 * k)
        score = int(rng.integers(1, 500))
        if influencer_posts and k == 0:
            score = 5000 if burst else 1500
        flair = "DD" if author == s.influencer else str(rng.choice(["YOLO", "Discussion", "Gain", "Loss"]))
        tree_id = f"t3_{day:%Y%m%d}x{k:02d}"
        rows.extend(_thread_rows(rng, tree_id, author, f"{s.ticker} thread {k}", score, posted,
                                 cascades[k], flair, s.bot_rate))
    # every deleted comment is its own user; submitters never comment
    edges = sum(len({c for c in cas if c != "[deleted]"}) + cas.count("[deleted]")
                for cas in cascades)
    return rows, (n_users, edges)


def generate_fixture(scenario: FixtureScenario = FixtureScenario(), seed: int = 42,
                     alert: AlertConfig = AlertConfig(),
                     events: EventStudyConfig = EventStudyConfig()) -> Fixture:
    s = scenario
    calendar = check_feasible(s, alert, events)
    rng = np.random.default_rng(seed)
    pool = [f"commenter{j:04d}" for j in range(s.commenter_pool)]
    bursts = set(s.burst_days)
    days = s.days()

    threads = []
    activity = []
    graph_counts = {}
    for i, day in enumerate(days):
        burst = i in bursts
        posts = burst or i % s.influencer_every == 0
        rows, counts = _day_threads(rng, s, i, day, pool, burst, posts)
        threads.extend(rows)
        graph_counts[day.isoformat()] = list(counts)
        activity.append({"date": day.isoformat(), "total_submissions": s.total_submissions,
                         "total_users": s.total_users})

    n = len(calendar)
    rm = rng.normal(s.market_mu, s.market_sigma, n)
    r = s.alpha + s.beta * rm + rng.normal(0.0, s.noise, n)
    volume = rng.lognormal(np.log(2e6), 0.25, n)
    event_positions = []
    for b in sorted(bursts):
        pos = next_trading_position(calendar, s.start + timedelta(days=b))
        event_positions.append(pos)
        r[pos + 1: pos + 1 + s.drift_days] += s.post_event_drift
        volume[pos: pos + 6] *= 5.0
    close = np.empty(n)
    close[0] = 20.0
    for t in range(1, n):
        close[t] = close[t - 1] * (1.0 + r[t])
    opens = close * (1.0 + rng.normal(0.0, 0.005, n))
    opens[1:] = close[:-1] * (1.0 + rng.normal(0.0, 0.005, n - 1))

    market = [{"date": d.isoformat(), "open": f"{o:.6f}", "close": f"{c:.6f}", "volume": int(v)}
              for d, o, c, v in zip(calendar, opens, close, volume)]
    index = [{"date": d.isoformat(), "return": f"{x:.8f}"} for d, x in zip(calendar, rm)]

    exo = []
    sub_rank = 40.0
    subscribers = 1.8e6
    for i in range(s.n_days + s.market_extra_days):
        d = s.start + timedelta(days=i)
        reports = int(rng.poisson(30)) if rng.random() < 0.15 else 0
        sub_rank = max(1.0, sub_rank - rng.uniform(0.0, 0.3))
        subscribers += rng.uniform(1e3, 2e4)
        exo.append({"date": d.isoformat(), "outage_reports": reports,
                    "subscriber_rank": f"{sub_rank:.2f}", "subscribers": int(subscribers),
                    "avg_user_rank": f"{rng.uniform(50, 150):.2f}"})

    truth = {
        "seed": seed,
        "ticker": s.ticker,
        "influencer": s.influencer,
        "burst_days": [days[b].isoformat() for b in sorted(bursts)],
        "event_dates": [calendar[p].isoformat() for p in event_positions],
        "expected_stage2": len(bursts),
        "expected_events": len(bursts),
        "graph_counts": graph_counts,
        "scenario": {k: (v.isoformat() if isinstance(v, date) else v)
                     for k, v in asdict(s).items()},
    }
    return Fixture(threads, market, index, exo, activity, truth)


def _write_csv(path: Path, rows: list[dict]) -> None:
    cols = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")


def write_fixture(fixture: Fixture, out_dir: Path, config_extra: Optional[dict] = None) -> dict[str, Path]:
    """Write the fixture files plus a ready-to-use pipeline config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ticker = fixture.truth["ticker"]
    paths = {
        "threads": out_dir / f"{ticker}_threads.jsonl",
        "market": out_dir / f"{ticker}_market.csv",
        "index": out_dir / "index.csv",
        "exogenous": out_dir / "exogenous.csv",
        "activity": out_dir / "activity.csv",
        "truth": out_dir / "ground_truth.json",
        "config": out_dir / "pipeline.cfg",
    }
    with open(paths["threads"], "w", encoding="utf-8") as fh:
        for row in fixture.threads:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_csv(paths["market"], fixture.market)
    _write_csv(paths["index"], fixture.index)
    _write_csv(paths["exogenous"], fixture.exogenous)
    _write_csv(paths["activity"], fixture.activity)
    paths["truth"].write_text(json.dumps(fixture.truth, indent=2, sort_keys=True) + "\n")
    lines = [
        f"tickers = {ticker}",
        f"meme_tickers = {ticker}",
        f"threads.{ticker} = {paths['threads'].name}",
        f"market.{ticker} = {paths['market'].name}",
        f"index = {paths['index'].name}",
        f"exogenous = {paths['exogenous'].name}",
        f"activity = {paths['activity'].name}",
        f"seed = {fixture.truth['seed']}",
    ]
    for k, v in (config_extra or {}).items():
        lines.append(f"{k} = {v}")
    paths["config"].write_text("\n".join(lines) + "\n")
    return paths
