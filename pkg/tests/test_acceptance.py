"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 10 needs the original forum dumps and market data, which are not
distributed with the package.  Point ``MEMEALERT_REPLICA_CONFIG`` at a
pipeline config for that data to run it; otherwise it is skipped.
"""

import csv
import os
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from builders import flat_tree, worked_example
from cases import ACTIVITY_60, STAGE1_60, TOTALS_60
from conftest import run_fixture
from memealert.alert_engine import DailyActivity, rolling_threshold, run_alert_pipeline
from memealert.cli import main
from memealert.econometrics import ols_hac, white_cov
from memealert.event_study import (EventStudyConfig, abnormal_returns, corrado_statistics,
                                   fit_market_model, rank_k, select_events)
from memealert.social_graph import in_degree_centrality, pagerank, reduce_trees, union_graph
from oracles import (corrado, indicator_counts, mad_threshold, pagerank_power, random_calendar,
                     select_events_bruteforce, stage1_sequence)
from simulation import coverage
from test_cli import _files


@pytest.fixture
def verdict(request, capsys):
    """Print one PASS/FAIL line for the criterion once its checks have run."""
    state = {"label": request.node.name, "detail": ""}
    yield state
    failed = getattr(request.node, "rep_call", None)
    failed = failed is None or failed.failed
    with capsys.disabled():
        print(f"\n[criterion {state['label']}] {'FAIL' if failed else 'PASS'} {state['detail']}")


def test_c01_stage1_state_machine(verdict):
    verdict["label"] = "1 stage-1 state machine"
    start = date(2021, 1, 1)
    acts = [DailyActivity(start + timedelta(days=i), "GME", s, u, *TOTALS_60)
            for i, (s, u) in enumerate(ACTIVITY_60)]
    t0 = time.perf_counter()
    states = run_alert_pipeline(acts, {})
    elapsed = time.perf_counter() - t0
    counts, warm = indicator_counts(ACTIVITY_60, *TOTALS_60)
    oracle = stage1_sequence(counts, warm)
    got = [s.stage1_on for s in states]
    mismatches = sum(a != b for a, b in zip(got, oracle))
    verdict["detail"] = f"mismatches={mismatches} runtime={elapsed:.4f}s"
    assert "".join(str(int(x)) for x in oracle) == STAGE1_60
    assert mismatches == 0 and len(got) == 60
    assert elapsed < 1.0


def test_c02_threshold_arithmetic(verdict):
    verdict["label"] = "2 threshold arithmetic"
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(1000):
        scale = 10.0 ** rng.integers(-3, 4)
        hist = list(rng.exponential(scale, 10) if i % 2 else rng.integers(0, 500, 10) * 1.0)
        worst = max(worst, abs(rolling_threshold(hist) - mad_threshold(hist)))
    verdict["detail"] = f"max_abs_err={worst:.3g}"
    assert worst <= 1e-12


def test_c03_graph_reduction(verdict):
    verdict["label"] = "3 graph reduction"
    g = reduce_trees(worked_example())
    assert g.nodes == frozenset(str(i) for i in range(10))
    assert g.edges == frozenset({("1", "0"), ("2", "0"), ("3", "0"), ("4", "0"),
                                 ("5", "6"), ("7", "6"), ("8", "6"), ("9", "6")})
    assert in_degree_centrality(g)["0"] == 0.4
    rng = np.random.default_rng(3)
    for k in range(300):
        users = [f"u{j}" for j in range(int(rng.integers(2, 15)))]
        trees = [flat_tree(f"t3_{k}_{m}", str(rng.choice(users)),
                           [str(u) for u in rng.choice(users, int(rng.integers(0, 12)))])
                 for m in range(int(rng.integers(1, 6)))]
        r = reduce_trees(trees)
        assert len(r.edges) <= len(r.nodes) * len(trees)
        assert all(s != d for s, d in r.edges)
        assert reduce_trees(trees + trees) == r and union_graph([r, r]).edges == r.edges
    verdict["detail"] = "nodes=10 edges=8 properties=300"


def test_c04_pagerank(verdict):
    verdict["label"] = "4 pagerank"
    rng = np.random.default_rng(4)
    worst, worst_sum = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(2, 201))
        m = int(rng.integers(0, 4 * n))
        nodes = [f"n{i}" for i in range(n)]
        edges = {(f"n{a}", f"n{b}") for a, b in rng.integers(0, n, (m, 2)) if a != b}
        pr = pagerank(nodes, edges)
        ref = pagerank_power(nodes, edges)
        worst = max(worst, max(abs(pr[u] - ref[u]) for u in nodes))
        worst_sum = max(worst_sum, abs(sum(pr.values()) - 1.0))
    verdict["detail"] = f"linf={worst:.3g} sum_err={worst_sum:.3g}"
    assert worst <= 1e-6 and worst_sum <= 1e-9


def test_c05_corrado(verdict):
    verdict["label"] = "5 corrado rank test"
    rng = np.random.default_rng(5)
    worst_mean, worst_t = 0.0, 0.0
    for _ in range(300):
        m = int(rng.integers(2, 60))
        sample = rng.normal(0, 0.03, m)
        k = rank_k(sample)
        worst_mean = max(worst_mean, abs(k.mean() - 0.5))
        assert sorted(np.rint(k * (m + 1)).astype(int).tolist()) == list(range(1, m + 1))
        _, t = corrado_statistics(sample)
        for i in range(m):
            worst_t = max(worst_t, abs(t[i] - corrado(list(sample), i)[1]))
    verdict["detail"] = f"mean_err={worst_mean:.3g} t_err={worst_t:.3g}"
    assert worst_mean <= 1e-15 and worst_t <= 1e-12


def test_c06_market_model(verdict):
    verdict["label"] = "6 market model"
    rm = np.random.default_rng(6).normal(0, 0.02, 31)
    fit = fit_market_model(0.02 + 0.5 * rm[:10], rm[:10])
    err = max(abs(fit.alpha - 0.02), abs(fit.beta - 0.5))
    same = fit_market_model(rm[:10], rm[:10])
    ar, car = abnormal_returns(same, rm, rm)
    verdict["detail"] = f"coef_err={err:.3g} max_identity_ar={np.abs(ar).max():.3g}"
    assert err <= 1e-10
    assert np.all(ar == 0.0) and np.all(car == 0.0)


def test_c07_event_selection(verdict):
    verdict["label"] = "7 event selection"
    rng = np.random.default_rng(7)
    mismatches = 0
    for i in range(500):
        cal = random_calendar(rng, n=int(rng.integers(40, 120)))
        span = (cal[-1] - cal[0]).days
        alerts = sorted({cal[0] + timedelta(days=int(d))
                         for d in rng.integers(0, span + 5, int(rng.integers(0, 12)))})
        unit = "trading" if i % 4 == 3 else "calendar"
        got = [cal.index(e.event_date)
               for e in select_events(alerts, cal, config=EventStudyConfig(spacing_unit=unit))]
        mismatches += got != select_events_bruteforce(alerts, cal, unit=unit)
    verdict["detail"] = f"calendars=500 mismatches={mismatches}"
    assert mismatches == 0


def test_c08_regression_engine(verdict):
    verdict["label"] = "8 regression engine"
    rng = np.random.default_rng(8)
    X = np.column_stack([np.ones(166), rng.normal(size=(166, 5))])
    y = X @ rng.normal(size=6) + rng.normal(size=166) * (1 + np.abs(X[:, 1]))
    res = ols_hac(X, y, hac_lags=0)
    white_err = np.max(np.abs(res.cov - white_cov(X, res.resid)))
    cov = coverage(replications=200, seed=2021, n_obs=166)
    low = min(cov, key=cov.get)
    verdict["detail"] = (f"white_err={white_err:.3g} min_coverage={cov[low]:.3f} ({low}) "
                         f"mean_coverage={np.mean(list(cov.values())):.3f}")
    assert white_err <= 1e-10
    assert all(v >= 0.95 for v in cov.values()), cov


def test_c09_end_to_end(verdict, tmp_path):
    verdict["label"] = "9 end-to-end fixture"
    t0 = time.perf_counter()
    code, cfg, (run_dir,), truth, _ = run_fixture(tmp_path / "a")
    elapsed = time.perf_counter() - t0
    assert code == 0
    with open(run_dir / "alert" / "GME_alerts.csv") as fh:
        fired = [r for r in csv.DictReader(fh) if r["stage2"] == "1"]
    with open(run_dir / "eventstudy" / "GME_events.csv") as fh:
        events = [r for r in csv.DictReader(fh) if r["status"] == "retained"]
    cars = []
    for ev in events:
        with open(run_dir / "eventstudy" / f"GME_event_{ev['event_date']}.csv") as fh:
            table = list(csv.DictReader(fh))
        cars.append(float(next(r for r in table if r["tau"] == "10")["CAR"]))
    _, _, (again,), _, _ = run_fixture(tmp_path / "b")
    identical = _files(run_dir) == _files(again)
    verdict["detail"] = (f"alerts={len(fired)} events={len(events)} "
                         f"car10={','.join(f'{c:.3f}' for c in cars)} "
                         f"identical={identical} runtime={elapsed:.1f}s")
    assert len(fired) == 3
    assert all(r["influencers"] == truth["influencer"] for r in fired)
    assert len(events) >= 1 and all(c > 0 for c in cars)
    assert identical
    assert elapsed < 30.0


TABLE1_COUNTS = {"GME": 21, "AMC": 4, "AAPL": 2, "MSFT": 1}


@pytest.mark.skipif(not os.environ.get("MEMEALERT_REPLICA_CONFIG"),
                    reason="needs the original forum dumps; set MEMEALERT_REPLICA_CONFIG")
def test_c10_replica(verdict, capsys):
    verdict["label"] = "10 replica run"
    cfg = Path(os.environ["MEMEALERT_REPLICA_CONFIG"])
    assert main(["run", "--config", str(cfg)]) == 0
    run_dir = Path(capsys.readouterr().out.strip().splitlines()[-1])
    counts = {}
    for ticker in TABLE1_COUNTS:
        with open(run_dir / "alert" / f"{ticker}_alerts.csv") as fh:
            counts[ticker] = sum(r["stage2"] == "1" for r in csv.DictReader(fh))
    with open(run_dir / "eventstudy" / "GME_events.csv") as fh:
        best = next(r for r in csv.DictReader(fh) if r["best"] == "1")
    with open(run_dir / "eventstudy" / f"GME_event_{best['event_date']}.csv") as fh:
        ar0 = float(next(r for r in csv.DictReader(fh) if r["tau"] == "0")["AR"])
    verdict["detail"] = f"counts={counts} gme_ar0={ar0:.4f}"
    assert counts == TABLE1_COUNTS
    assert abs(ar0 - 0.233) <= 0.02
