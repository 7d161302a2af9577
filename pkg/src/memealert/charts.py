"""Standalone SVG charts for event studies and alert timelines."""

from __future__ import annotations

from datetime import date
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data_ingest import MarketSeries  # noqa: E402
from .event_study import EventStudyResult  # noqa: E402

# fixed salt and no timestamp so reruns write identical bytes
_RC = {"svg.hashsalt": "memealert", "svg.fonttype": "none", "font.size": 9}
_META = {"Date": None}


def event_chart(result: EventStudyResult, path: Path) -> None:
    taus = result.taus
    with plt.rc_context(_RC):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        top.bar(taus, result.ar, color="#4c72b0", label="AR")
        top.plot(taus, result.car, color="#dd8452", marker="o", label="CAR")
        top.axhline(0.0, color="grey", linestyle="--", linewidth=1, gid="reference-line")
        top.axvline(0, color="red", linewidth=1.2, gid="event-marker")
        top.set_ylabel("abnormal return")
        top.legend(loc="upper left")
        top.set_title(f"{result.spec.ticker} event {result.spec.event_date}")
        bottom.bar(taus, result.avol, color="#55a868", label="AVol")
        bottom.axhline(1.0, color="grey", linestyle="--", linewidth=1, gid="avol-reference-line")
        bottom.axvline(0, color="red", linestyle="--", linewidth=1.2, gid="avol-event-marker")
        bottom.set_ylabel("abnormal volume")
        bottom.set_xlabel("trading days relative to event")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_META)
        plt.close(fig)


def alert_timeline_chart(series: MarketSeries, alert_days: Sequence[date], path: Path) -> None:
    with plt.rc_context(_RC):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(9, 5), sharex=True,
                                          gridspec_kw={"height_ratios": [3, 1]})
        top.plot(series.dates, series.close, color="black", linewidth=1)
        for i, d in enumerate(alert_days):
            top.axvline(d, color="#1f77b4", linewidth=1, gid=f"alert-{i}")
        top.set_ylabel("close")
        top.set_title(f"{series.ticker}: close price and stage-2 alert days")
        bottom.bar(series.dates, series.volume, color="grey", width=1.0)
        bottom.set_ylabel("volume")
        fig.autofmt_xdate()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata=_META)
        plt.close(fig)
