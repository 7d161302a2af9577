"""Command-line driver: ingest -> alert -> eventstudy -> regress -> report.

Every stage reads only what the previous stage persisted under the run
directory, so stages can be re-run independently.  The run directory name is
a hash of the effective configuration, which keeps re-runs on identical inputs
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from collections import defaultdict
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import charts
from .alert_engine import (ActivityGapError, DailyActivity, InsufficientHistoryError,
                           run_alert_pipeline, write_alert_report, write_indicator_audit)
from .config import ConfigError, PipelineConfig, load_config
from .data_ingest import (DataError, ConversationTree, MarketSeries, filter_bots,
                          load_activity_totals, load_exogenous_csv, load_index_csv,
                          load_market_csv, parse_thread_dump, write_thread_csv)
from .econometrics import (DEFAULT_SPECS, PREDICTIVE, DesignError, SeriesStore, fit_spec,
                           parse_spec, write_regression_report)
from .event_study import (EventWindowError, best_event, run_event_study, sample_abnormal_series,
                          select_events, write_event_report)
from .fixtures import FixtureScenario, InfeasibleScenarioError, generate_fixture, write_fixture
from .social_graph import (average_branching_number, filtered_reduce, write_edge_list,
                           write_graph_summary)

logger = logging.getLogger("memealert")

EXIT_OK = 0
EXIT_INPUT = 3
EXIT_CONFIG = 4
EXIT_INFEASIBLE = 5

STAGES = ("ingest", "alert", "eventstudy", "regress", "report")

ACTIVITY_COLUMNS = ("date", "ticker_submissions", "ticker_users", "total_submissions",
                    "total_users", "ticker_comments", "abn")


class InputError(Exception):
    """Missing or unreadable input, including an absent upstream stage."""


class InfeasibleError(Exception):
    """The data is valid but the requested analysis cannot be carried out."""


# ----------------------------------------------------------------------------
# manifests


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    d = cfg.run_dir() / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _finish_stage(cfg: PipelineConfig, stage: str, summary: dict) -> None:
    """Write the stage manifest and fold it into the run manifest."""
    d = cfg.run_dir() / stage
    files = {p.name: _sha256(p) for p in sorted(d.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    manifest = {"stage": stage, "files": files, **summary}
    _write_json(d / "manifest.json", manifest)

    run_manifest = cfg.run_dir() / "manifest.json"
    if run_manifest.exists():
        run = json.loads(run_manifest.read_text(encoding="utf-8"))
    else:
        run = {}
    run["run_id"] = cfg.run_id()
    run["config"] = cfg.describe()
    stages = run.setdefault("stages", {})
    stages[stage] = {"manifest": f"{stage}/manifest.json",
                     "manifest_sha256": _sha256(d / "manifest.json")}
    _write_json(run_manifest, run)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise InputError(f"{path} not found; run the '{stage}' stage first")
    return path


def _load_stage_manifest(cfg: PipelineConfig, stage: str) -> dict:
    path = _require(cfg.run_dir() / stage / "manifest.json", stage)
    return json.loads(path.read_text(encoding="utf-8"))


# ----------------------------------------------------------------------------
# ingest


def _in_range(cfg: PipelineConfig, day: date) -> bool:
    return ((cfg.start_date is None or day >= cfg.start_date)
            and (cfg.end_date is None or day <= cfg.end_date))


def _with_file_context(path: Path, fn, *args):
    try:
        return fn(path, *args)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _input_hashes(cfg: PipelineConfig) -> dict[str, str]:
    paths = [cfg.activity, cfg.index, cfg.exogenous, *cfg.threads.values(), *cfg.market.values()]
    names = {str(p): p for p in paths if p is not None and Path(p).exists()}
    return {Path(k).name: _sha256(p) for k, p in sorted(names.items())}


def cmd_ingest(cfg: PipelineConfig) -> int:
    out = _stage_dir(cfg, "ingest")
    totals = _with_file_context(cfg.activity, load_activity_totals)
    totals = {d: v for d, v in totals.items() if _in_range(cfg, d)}
    index = _with_file_context(cfg.index, load_index_csv) if cfg.index else None
    summary: dict = {"tickers": {}, "activity_days": len(totals), "inputs": _input_hashes(cfg)}

    for ticker in cfg.tickers:
        parsed = _with_file_context(cfg.threads[ticker], parse_thread_dump, ticker)
        nodes_before = sum(len(t.nodes) for t in parsed.trees)
        trees = filter_bots(parsed.trees)
        nodes_after = sum(len(t.nodes) for t in trees)
        outside = [t for t in trees if t.day not in totals]
        trees = [t for t in trees if t.day in totals]
        with open(out / f"{ticker}_threads.csv", "w", encoding="utf-8", newline="") as fh:
            write_thread_csv(trees, fh)
        (out / f"{ticker}_diagnostics.txt").write_text(
            "".join(line + "\n" for line in parsed.diagnostics), encoding="utf-8")

        by_day: dict[date, list[ConversationTree]] = defaultdict(list)
        for t in trees:
            by_day[t.day].append(t)
        with open(out / f"{ticker}_activity.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(ACTIVITY_COLUMNS) + "\n")
            for day in sorted(totals):
                day_trees = by_day.get(day, [])
                users = set()
                for t in day_trees:
                    users |= t.users()
                subs, tot_users = totals[day]
                fh.write(f"{day},{len(day_trees)},{len(users)},{subs},{tot_users},"
                         f"{sum(t.n_comments for t in day_trees)},"
                         f"{average_branching_number(day_trees):.10g}\n")

        market = _with_file_context(cfg.market[ticker], load_market_csv, ticker)
        if index is not None:
            try:
                market = market.with_market_returns(index)
            except DataError as exc:
                raise DataError(f"{cfg.index}: {exc}") from None
        with open(out / f"{ticker}_market.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("date,open,close,volume,market_return\n")
            for i, d in enumerate(market.dates):
                rm = "" if market.market_return is None else format(market.market_return[i], ".10g")
                fh.write(f"{d},{market.open[i]:.10g},{market.close[i]:.10g},"
                         f"{market.volume[i]:.10g},{rm}\n")

        summary["tickers"][ticker] = {
            "rows": parsed.rows,
            "rows_dropped": parsed.dropped,
            "orphans_repaired": parsed.repaired,
            "trees": len(trees),
            "trees_outside_range": len(outside),
            "nodes": sum(len(t.nodes) for t in trees),
            "bots_removed": nodes_before - nodes_after,
            "market_days": len(market),
            "has_market_returns": market.market_return is not None,
        }
        logger.info("ingest %s: %d trees, %d bot nodes removed, %d orphans repaired",
                    ticker, len(trees), nodes_before - nodes_after, parsed.repaired)

    if cfg.exogenous:
        exo = _with_file_context(cfg.exogenous, load_exogenous_csv)
        with open(out / "exogenous.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("date,outage_reports,subscriber_rank,subscribers,avg_user_rank\n")
            for i, d in enumerate(exo.dates):
                fh.write(f"{d},{exo.outage_reports[i]:.10g},{exo.subscriber_rank[i]:.10g},"
                         f"{exo.subscribers[i]:.10g},{exo.avg_user_rank[i]:.10g}\n")
        summary["exogenous_days"] = len(exo.dates)
    _finish_stage(cfg, "ingest", summary)
    return EXIT_OK


# ----------------------------------------------------------------------------
# readers for persisted stage outputs


def _read_trees(cfg: PipelineConfig, ticker: str) -> dict[date, list[ConversationTree]]:
    path = _require(cfg.run_dir() / "ingest" / f"{ticker}_threads.csv", "ingest")
    by_day: dict[date, list[ConversationTree]] = defaultdict(list)
    for t in parse_thread_dump(path, ticker).trees:
        by_day[t.day].append(t)
    return by_day


def _read_activity(cfg: PipelineConfig, ticker: str) -> tuple[list[DailyActivity], dict[date, float]]:
    path = _require(cfg.run_dir() / "ingest" / f"{ticker}_activity.csv", "ingest")
    acts, abn = [], {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            day = date.fromisoformat(row["date"])
            acts.append(DailyActivity(day, ticker, int(row["ticker_submissions"]),
                                      int(row["ticker_users"]), int(row["total_submissions"]),
                                      int(row["total_users"]), int(row["ticker_comments"])))
            abn[day] = float(row["abn"])
    return acts, abn


def _read_market(cfg: PipelineConfig, ticker: str) -> MarketSeries:
    return load_market_csv(_require(cfg.run_dir() / "ingest" / f"{ticker}_market.csv", "ingest"),
                           ticker)


def _read_alert_days(cfg: PipelineConfig, ticker: str) -> list[tuple[date, tuple[str, ...]]]:
    path = _require(cfg.run_dir() / "alert" / f"{ticker}_alerts.csv", "alert")
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["stage2"] == "1":
                out.append((date.fromisoformat(row["day"]),
                            tuple(x for x in row["influencers"].split(";") if x)))
    return out


# ----------------------------------------------------------------------------
# alert


def cmd_alert(cfg: PipelineConfig) -> int:
    out = _stage_dir(cfg, "alert")
    summary: dict = {"tickers": {}}
    for ticker in cfg.tickers:
        acts, _ = _read_activity(cfg, ticker)
        trees = _read_trees(cfg, ticker)
        states = run_alert_pipeline(acts, trees, cfg.alert)
        with open(out / f"{ticker}_alerts.csv", "w", encoding="utf-8", newline="") as fh:
            write_alert_report(states, fh)
        with open(out / f"{ticker}_indicators.csv", "w", encoding="utf-8", newline="") as fh:
            write_indicator_audit(states, fh)
        on_days = [s.day for s in states if s.stage1_on]
        graphs = [filtered_reduce(trees.get(d, []), cfg.alert.min_cascade, cfg.alert.strict_median,
                                  day=d, ticker=ticker) for d in on_days]
        with open(out / f"{ticker}_graph_summary.csv", "w", encoding="utf-8", newline="") as fh:
            write_graph_summary(graphs, fh, cfg.alert.k_indegree)
        with open(out / f"{ticker}_edges.csv", "w", encoding="utf-8", newline="") as fh:
            write_edge_list(graphs, fh)
        stage2 = [s for s in states if s.stage2_on]
        warm = next((s.day for s in states if s.snapshot and s.snapshot.warm), None)
        summary["tickers"][ticker] = {
            "days": len(states),
            "first_warm_day": str(warm) if warm else None,
            "stage1_days": len(on_days),
            "stage2_days": [str(s.day) for s in stage2],
            "influencers": sorted({u for s in stage2 for u in s.flagged_influencers}),
        }
        logger.info("alert %s: %d stage-1 day(s), %d stage-2 alert(s)",
                    ticker, len(on_days), len(stage2))
    _finish_stage(cfg, "alert", summary)
    return EXIT_OK


# ----------------------------------------------------------------------------
# event study


def cmd_eventstudy(cfg: PipelineConfig) -> int:
    out = _stage_dir(cfg, "eventstudy")
    summary: dict = {"tickers": {}}
    for ticker in cfg.tickers:
        market = _read_market(cfg, ticker)
        if market.market_return is None:
            raise InputError(f"{ticker}: no market index returns; set 'index' in the config")
        alerts = [d for d, _ in _read_alert_days(cfg, ticker)]
        rejected: list = []
        specs = select_events(alerts, market.dates, ticker, cfg.events, rejected)
        results = []
        for spec in specs:
            try:
                results.append(run_event_study(market, spec, cfg.events))
            except (EventWindowError, ValueError) as exc:
                rejected.append((spec.alert_date, f"event study failed: {exc}"))
        best = best_event(results, cfg.events.post_days)
        for res in results:
            stem = f"{ticker}_event_{res.spec.event_date}"
            with open(out / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
                write_event_report(res, fh)
            charts.event_chart(res, out / f"{stem}.svg")
        with open(out / f"{ticker}_events.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("alert_date,event_date,status,car_post,best,reason\n")
            rows = []
            for res in results:
                rows.append((res.spec.alert_date, f"{res.spec.alert_date},{res.spec.event_date},"
                             f"retained,{res.post_event_car(cfg.events.post_days):.10g},"
                             f"{int(res is best)},\n"))
            for day, reason in rejected:
                rows.append((day, f"{day},,skipped,,0,{reason.replace(',', ';')}\n"))
            for _, line in sorted(rows, key=lambda r: r[0]):
                fh.write(line)
        summary["tickers"][ticker] = {
            "alerts": len(alerts),
            "retained": [str(r.spec.event_date) for r in results],
            "skipped": len(rejected),
            "best_event": str(best.spec.event_date) if best else None,
        }
        logger.info("eventstudy %s: %d alert(s), %d event(s) retained",
                    ticker, len(alerts), len(results))
    _finish_stage(cfg, "eventstudy", summary)
    return EXIT_OK


# ----------------------------------------------------------------------------
# regressions


def _regression_store(cfg: PipelineConfig, ticker: str) -> SeriesStore:
    market = _read_market(cfg, ticker)
    if market.market_return is None:
        raise InputError(f"{ticker}: no market index returns; set 'index' in the config")
    _, abn = _read_activity(cfg, ticker)
    ar, av = sample_abnormal_series(market, cfg.ar_window, cfg.ar_mode)
    series: dict[str, dict[date, float]] = {"abn": {d: abn.get(d, 0.0) for d in market.dates}}
    exo_path = cfg.run_dir() / "ingest" / "exogenous.csv"
    if exo_path.exists():
        series.update(load_exogenous_csv(exo_path).as_dict())
    dates = [d for d in market.dates if all(d in v for v in series.values())]
    if len(dates) < len(market.dates):
        logger.warning("%s: %d trading day(s) lack exogenous data and are left out",
                       ticker, len(market.dates) - len(dates))
    store = SeriesStore.from_mappings(dates, series)
    keep = np.array([d in set(dates) for d in market.dates])
    store.add("AR", ar[keep])
    store.add("AV", av[keep])
    store.add("volume", market.volume[keep])
    store.add("open", market.open[keep])
    store.add("close", market.close[keep])
    return store


def _load_specs(cfg: PipelineConfig):
    if not cfg.regression_specs:
        return list(DEFAULT_SPECS)
    specs = []
    for path in cfg.regression_specs:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read spec {path}: {exc.strerror}") from None
        try:
            specs.append(parse_spec(text, path.stem))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return specs


def cmd_regress(cfg: PipelineConfig) -> int:
    out = _stage_dir(cfg, "regress")
    specs = _load_specs(cfg)
    summary: dict = {"tickers": {}}
    failures = 0
    for ticker in cfg.tickers:
        store = _regression_store(cfg, ticker)
        with open(out / f"{ticker}_series.csv", "w", encoding="utf-8", newline="") as fh:
            names = sorted(store.columns)
            fh.write("date," + ",".join(names) + "\n")
            for i, d in enumerate(store.dates):
                fh.write(f"{d}," + ",".join(format(store.columns[n][i], ".10g") for n in names)
                         + "\n")
        meme = ticker in cfg.meme_tickers
        info: dict = {}
        for spec in specs:
            try:
                res = fit_spec(store, spec)
            except (DesignError, np.linalg.LinAlgError) as exc:
                failures += 1
                info[spec.name] = {"status": "failed", "error": str(exc)}
                logger.error("regress %s/%s: %s", ticker, spec.name, exc)
                continue
            if spec == PREDICTIVE and not meme:
                res.notes.append("non-meme predictive regression: computed, not part of the "
                                 "headline report")
            with open(out / f"{ticker}_{spec.name}.csv", "w", encoding="utf-8", newline="") as fh:
                write_regression_report(res, fh)
            info[spec.name] = {"status": "ok", "n": res.n, "hac_lags": res.hac_lags,
                               "notes": res.notes}
        summary["tickers"][ticker] = info
    summary["failed_specs"] = failures
    _finish_stage(cfg, "regress", summary)
    if failures:
        raise InfeasibleError(f"{failures} regression spec(s) failed; see regress/manifest.json")
    return EXIT_OK


# ----------------------------------------------------------------------------
# report


def _csv_rows(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(cfg: PipelineConfig) -> int:
    out = _stage_dir(cfg, "report")
    run = cfg.run_dir()
    lines = [f"# Run {cfg.run_id()}", ""]
    if cfg.strict_paper:
        lines += ["Literal-reading mode (`--strict-paper`) was on for this run.", ""]
    alert_manifest = _load_stage_manifest(cfg, "alert")
    for ticker in cfg.tickers:
        lines += [f"## {ticker}", ""]
        alerts = _read_alert_days(cfg, ticker)
        info = alert_manifest["tickers"].get(ticker, {})
        lines.append(f"Stage-1 days: {info.get('stage1_days', 0)}. "
                     f"Stage-2 alerts: {len(alerts)}.")
        lines.append("")
        if alerts:
            lines += ["| day | influencers |", "|---|---|"]
            lines += [f"| {d} | {', '.join(users)} |" for d, users in alerts]
            lines.append("")
        events_csv = run / "eventstudy" / f"{ticker}_events.csv"
        if events_csv.exists():
            rows = _csv_rows(events_csv)
            kept = [r for r in rows if r["status"] == "retained"]
            lines.append(f"Events retained: {len(kept)} of {len(rows)} alert day(s).")
            lines.append("")
            if kept:
                lines += ["| event date | CAR(+1..+10) | best |", "|---|---|---|"]
                lines += [f"| {r['event_date']} | {float(r['car_post']):.4f} | "
                          f"{'yes' if r['best'] == '1' else ''} |" for r in kept]
                lines.append("")
            best = next((r for r in kept if r["best"] == "1"), None)
            if best:
                table = _csv_rows(run / "eventstudy" / f"{ticker}_event_{best['event_date']}.csv")
                lines += [f"Best event {best['event_date']}:", "",
                          "| tau | AR | CAR | AVol | t_rank |", "|---|---|---|---|---|"]
                lines += [f"| {r['tau']} | {float(r['AR']):.4f}{r['stars']} | "
                          f"{float(r['CAR']):.4f} | {float(r['AVol']):.3f} | "
                          f"{float(r['t_rank']):.3f} |" for r in table]
                lines.append("")
        for spec_csv in sorted((run / "regress").glob(f"{ticker}_*.csv")):
            if spec_csv.name == f"{ticker}_series.csv":
                continue
            body = spec_csv.read_text(encoding="utf-8").split("\n\n")[0].splitlines()
            lines += [f"Regression `{spec_csv.stem[len(ticker) + 1:]}`:", "",
                      "| regressor | coef | t | |", "|---|---|---|---|"]
            for row in body[1:]:
                nm, c, t, _, stars = row.split(",")
                lines.append(f"| {nm} | {float(c):.4g} | {float(t):.3f} | {stars} |")
            lines.append("")
        market = _read_market(cfg, ticker)
        charts.alert_timeline_chart(market, [d for d, _ in alerts], out / f"{ticker}_timeline.svg")
        lines += [f"![{ticker} timeline]({ticker}_timeline.svg)", ""]
    (out / "report.md").write_text("\n".join(lines), encoding="utf-8")
    _finish_stage(cfg, "report", {"tickers": list(cfg.tickers)})
    return EXIT_OK


def cmd_run(cfg: PipelineConfig) -> int:
    for fn in (cmd_ingest, cmd_alert, cmd_eventstudy, cmd_regress, cmd_report):
        fn(cfg)
    return EXIT_OK


# ----------------------------------------------------------------------------
# fixture


def cmd_fixture(args: argparse.Namespace) -> int:
    bursts = tuple(int(x) for x in args.bursts.split(",") if x.strip()) if args.bursts else ()
    scenario = FixtureScenario(ticker=args.ticker, n_days=args.n_days, burst_days=bursts)
    fixture = generate_fixture(scenario, seed=args.seed if args.seed is not None else 42)
    out = Path(args.out_dir) if args.out_dir else Path("fixture")
    paths = write_fixture(fixture, out, {"out_dir": "runs"})
    logger.info("fixture written to %s (%d bursts)", out, len(bursts))
    print(paths["config"])
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memealert", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
        if needs_config:
            p.add_argument("--config", required=True, help="pipeline config file (key = value)")
            p.add_argument("--strict-paper", action="store_true",
                           help="use the most literal reading of every method choice")
        p.add_argument("--out-dir", help="output directory (overrides out_dir in the config)")
        p.add_argument("--seed", type=int, help="random seed")

    for name, text in (("ingest", "parse and normalise inputs"),
                       ("alert", "run the two-stage alert system"),
                       ("eventstudy", "event study around stage-2 alerts"),
                       ("regress", "HAC regressions of abnormal returns and volume"),
                       ("report", "markdown summary and timeline charts"),
                       ("run", "all stages in order")):
        common(sub.add_parser(name, help=text))
    fx = sub.add_parser("fixture", help="write a seeded synthetic data set")
    common(fx, needs_config=False)
    fx.add_argument("--ticker", default="GME")
    fx.add_argument("--n-days", type=int, default=150)
    fx.add_argument("--bursts", default="30,75,120",
                    help="comma-separated day offsets of planted episodes ('' for none)")
    return parser


COMMANDS = {"ingest": cmd_ingest, "alert": cmd_alert, "eventstudy": cmd_eventstudy,
            "regress": cmd_regress, "report": cmd_report, "run": cmd_run}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixture":
            return cmd_fixture(args)
        overrides = {"seed": args.seed}
        cfg = load_config(args.config, overrides, args.strict_paper)
        if args.out_dir:
            cfg = dataclasses.replace(cfg, out_dir=Path(args.out_dir))
        code = COMMANDS[args.command](cfg)
        print(cfg.run_dir())
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InputError, ActivityGapError, DesignError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InfeasibleError, InsufficientHistoryError, InfeasibleScenarioError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
