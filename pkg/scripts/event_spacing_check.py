"""Apply the event-spacing rule to the 2020-21 meme-stock alert dates.

Prints how many events survive under calendar-day and trading-day spacing,
so the two readings of the ten-day rule can be compared.

    python3 scripts/event_spacing_check.py
"""

import argparse
from datetime import date, timedelta

import numpy as np

from memealert.event_study import EventStudyConfig, select_events

NYSE_HOLIDAYS = [
    "2020-09-07", "2020-11-26", "2020-12-25", "2021-01-01", "2021-01-18", "2021-02-15",
    "2021-04-02", "2021-05-31", "2021-07-05", "2021-09-06",
]

ALERTS = {
    "GME": ["2020-11-09", "2020-11-10", "2020-11-20", "2020-11-21", "2020-11-22", "2020-11-25",
            "2020-11-27", "2020-12-26", "2021-01-03", "2021-01-14", "2021-01-18", "2021-01-19",
            "2021-01-21", "2021-01-23", "2021-01-25", "2021-01-28", "2021-01-29", "2021-03-09",
            "2021-04-15", "2021-04-16", "2021-06-25"],
    "AMC": ["2020-11-09", "2021-01-31", "2021-05-19", "2021-06-01"],
    "AAPL": ["2020-12-24", "2021-06-22"],
    "MSFT": ["2021-05-20"],
}


def trading_days(start: date, end: date) -> list[date]:
    days = np.arange(np.datetime64(start), np.datetime64(end + timedelta(days=1)))
    mask = np.is_busday(days, holidays=np.array(NYSE_HOLIDAYS, dtype="datetime64[D]"))
    return [d.astype(object) for d in days[mask]]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--spacing", type=int, default=10)
    args = parser.parse_args()
    calendar = trading_days(date(2020, 9, 1), date(2021, 9, 30))
    print(f"{'ticker':6} {'alerts':>6} {'calendar':>8} {'trading':>8}")
    for ticker, days in ALERTS.items():
        alerts = [date.fromisoformat(d) for d in days]
        counts = []
        for unit in ("calendar", "trading"):
            cfg = EventStudyConfig(spacing=args.spacing, spacing_unit=unit)
            counts.append(len(select_events(alerts, calendar, ticker, cfg)))
        print(f"{ticker:6} {len(alerts):6d} {counts[0]:8d} {counts[1]:8d}")


if __name__ == "__main__":
    main()
