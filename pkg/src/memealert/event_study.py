"""Market-model event study around alert dates.

Windows are expressed in trading days relative to the event day (tau = 0).
By default the estimation window is tau-20..tau-11 (ten returns) and the event
window tau-10..tau+10.  Significance uses the Corrado rank test over the
abnormal returns of both windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .data_ingest import MarketSeries, daily_returns

logger = logging.getLogger(__name__)


class EventWindowError(ValueError):
    pass


@dataclass(frozen=True)
class EventStudyConfig:
    estimation: tuple[int, int] = (-20, -11)
    event: tuple[int, int] = (-10, 10)
    spacing: int = 10
    spacing_unit: str = "calendar"  # "calendar" | "trading"
    rank_scope: str = "event"  # "event" | "sample"
    rank_order: str = "ascending"  # "ascending" | "descending"
    post_days: int = 10

    @property
    def l1(self) -> int:
        return self.estimation[1] - self.estimation[0] + 1

    @property
    def l2(self) -> int:
        return self.event[1] - self.event[0] + 1


@dataclass(frozen=True)
class EventSpec:
    ticker: str
    alert_date: date
    event_date: date
    position: int  # index of the event day in the market calendar
    estimation: tuple[int, int]  # inclusive calendar positions
    event_window: tuple[int, int]

    def __post_init__(self):
        if not self.estimation[0] <= self.estimation[1] < self.event_window[0] <= self.event_window[1]:
            raise ValueError("estimation window must end before the event window starts")


@dataclass(frozen=True)
class MarketModelFit:
    alpha: float
    beta: float
    resid_var: float
    n: int
    beta_se: float = float("nan")


@dataclass
class EventStudyResult:
    spec: EventSpec
    fit: MarketModelFit
    taus: np.ndarray
    dates: tuple[date, ...]
    ar: np.ndarray
    car: np.ndarray
    avol: np.ndarray
    k: np.ndarray
    t_rank: np.ndarray
    stars: tuple[str, ...]
    estimation_ar: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def post_event_car(self, days: int = 10) -> float:
        """Sum of abnormal returns over tau = +1..+days."""
        mask = (self.taus >= 1) & (self.taus <= days)
        return float(self.ar[mask].sum())

    def at(self, tau: int) -> int:
        return int(np.flatnonzero(self.taus == tau)[0])


def next_trading_position(calendar: Sequence[date], day: date) -> Optional[int]:
    lo, hi = 0, len(calendar)
    while lo < hi:
        mid = (lo + hi) // 2
        if calendar[mid] < day:
            lo = mid + 1
        else:
            hi = mid
    return lo if lo < len(calendar) else None


def select_events(alert_dates: Iterable, calendar: Sequence[date], ticker: str = "",
                  config: EventStudyConfig = EventStudyConfig(),
                  rejected: Optional[list] = None) -> list[EventSpec]:
    """Map stage-2 alert days onto trading days and enforce event spacing.

    Alerts on non-trading days move to the next trading day.  Candidates are
    accepted earliest first; one closer than ``config.spacing`` days to the
    last accepted event is dropped, as is one whose windows fall outside the
    calendar.  Positions count returns, so the estimation window may not start
    on the very first calendar day.  Reasons are appended to ``rejected``.
    """
    days = set()
    for a in alert_dates:
        if hasattr(a, "stage2_on"):
            if not a.stage2_on:
                continue
            a = a.day
        days.add(a)
    out: list[EventSpec] = []
    last: Optional[int] = None
    seen_positions = set()
    for alert in sorted(days):
        pos = next_trading_position(calendar, alert)
        if pos is None:
            _reject(rejected, alert, "after end of market data")
            continue
        if pos in seen_positions:
            _reject(rejected, alert, "same event date as an earlier alert")
            continue
        seen_positions.add(pos)
        est = (pos + config.estimation[0], pos + config.estimation[1])
        evt = (pos + config.event[0], pos + config.event[1])
        if est[0] < 1 or evt[1] > len(calendar) - 1:
            _reject(rejected, alert, "event windows do not fit the market data")
            continue
        if last is not None:
            gap = ((calendar[pos] - calendar[last]).days if config.spacing_unit == "calendar"
                   else pos - last)
            if gap < config.spacing:
                _reject(rejected, alert, f"within {config.spacing} days of {calendar[last]}")
                continue
        out.append(EventSpec(ticker, alert, calendar[pos], pos, est, evt))
        last = pos
    return out


def _reject(rejected: Optional[list], day: date, reason: str) -> None:
    logger.debug("alert %s dropped: %s", day, reason)
    if rejected is not None:
        rejected.append((day, reason))


def fit_market_model(stock: np.ndarray, market: np.ndarray) -> MarketModelFit:
    """OLS of stock on market returns; residual variance uses n - 2 dof."""
    y = np.asarray(stock, dtype=float)
    x = np.asarray(market, dtype=float)
    n = y.size
    if n != x.size or n < 3:
        raise ValueError("need at least three paired returns")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise ValueError("market returns are constant over the estimation window")
    beta = float(xc @ (y - y.mean())) / sxx
    alpha = float(y.mean() - beta * x.mean())
    resid = y - alpha - beta * x
    var = float(resid @ resid) / (n - 2)
    return MarketModelFit(alpha, beta, var, n, float(np.sqrt(var / sxx)))


def abnormal_returns(fit: MarketModelFit, stock: np.ndarray,
                     market: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ar = np.asarray(stock, dtype=float) - fit.alpha - fit.beta * np.asarray(market, dtype=float)
    if np.isnan(ar).any():
        raise ValueError("missing return inside the window")
    return ar, np.cumsum(ar)


def rank_k(sample: np.ndarray, descending: bool = False) -> np.ndarray:
    """Midranks scaled by 1 / (1 + M)."""
    x = np.asarray(sample, dtype=float)
    ranks = stats.rankdata(-x if descending else x, method="average")
    return ranks / (1.0 + x.size)


def corrado_statistics(sample: np.ndarray, descending: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """K and t_rank for every observation of the sample."""
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise ValueError("rank test needs at least two observations")
    k = rank_k(x, descending)
    s_k = np.sqrt(np.mean((k - 0.5) ** 2))
    if s_k == 0:
        return k, np.zeros_like(k)
    return k, (k - 0.5) / s_k


def corrado_rank_test(sample: np.ndarray, index: int, descending: bool = False) -> tuple[float, float]:
    k, t = corrado_statistics(sample, descending)
    return float(k[index]), float(t[index])


def significance_stars(t: float) -> str:
    p = 2.0 * stats.norm.sf(abs(t))
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def abnormal_volume(volume: np.ndarray, estimation: slice, event: slice) -> np.ndarray:
    vol = np.asarray(volume, dtype=float)
    base = vol[estimation].mean()
    if not base > 0:
        raise ValueError("estimation-window mean volume is zero")
    return vol[event] / base


def _returns_by_position(series: MarketSeries) -> tuple[np.ndarray, np.ndarray]:
    """Stock and market returns indexed by calendar position (NaN at position 0)."""
    if series.market_return is None:
        raise ValueError(f"{series.ticker}: no market index returns attached")
    r = np.concatenate([[np.nan], daily_returns(series)])
    return r, np.asarray(series.market_return, dtype=float)


def run_event_study(series: MarketSeries, spec: EventSpec,
                    config: EventStudyConfig = EventStudyConfig()) -> EventStudyResult:
    r, rm = _returns_by_position(series)
    e0, e1 = spec.estimation
    v0, v1 = spec.event_window
    if e0 < 1 or v1 >= len(series):
        raise EventWindowError(f"{spec.event_date}: windows exceed the market data")
    est = slice(e0, e1 + 1)
    evt = slice(v0, v1 + 1)
    fit = fit_market_model(r[est], rm[est])
    est_ar, _ = abnormal_returns(fit, r[est], rm[est])
    ar, car = abnormal_returns(fit, r[evt], rm[evt])
    avol = abnormal_volume(series.volume, est, evt)
    descending = config.rank_order == "descending"
    if config.rank_scope == "sample":
        full = r[1:] - fit.alpha - fit.beta * rm[1:]
        k_all, t_all = corrado_statistics(full, descending)
        k, t = k_all[v0 - 1:v1], t_all[v0 - 1:v1]
    else:
        k_all, t_all = corrado_statistics(np.concatenate([est_ar, ar]), descending)
        k, t = k_all[est_ar.size:], t_all[est_ar.size:]
    taus = np.arange(v0, v1 + 1) - spec.position
    return EventStudyResult(
        spec=spec,
        fit=fit,
        taus=taus,
        dates=series.dates[evt],
        ar=ar,
        car=car,
        avol=avol,
        k=k,
        t_rank=t,
        stars=tuple(significance_stars(x) for x in t),
        estimation_ar=est_ar,
    )


def best_event(results: Sequence[EventStudyResult], days: int = 10) -> Optional[EventStudyResult]:
    """The event with the largest cumulative abnormal return after tau = 0."""
    if not results:
        return None
    return max(results, key=lambda res: (res.post_event_car(days), res.spec.event_date))


def write_event_report(result: EventStudyResult, fh) -> None:
    fh.write("tau,date,AR,CAR,AVol,K,t_rank,stars\n")
    for i, tau in enumerate(result.taus):
        fh.write(f"{int(tau)},{result.dates[i]},{result.ar[i]:.10g},{result.car[i]:.10g},"
                 f"{result.avol[i]:.10g},{result.k[i]:.10g},{result.t_rank[i]:.10g},"
                 f"{result.stars[i]}\n")


def sample_abnormal_series(series: MarketSeries, window: int = 10,
                           mode: str = "rolling") -> tuple[np.ndarray, np.ndarray]:
    """Daily abnormal returns and abnormal volume over the whole sample.

    ``rolling`` re-fits the market model on the trailing ``window`` returns and
    scales volume by its trailing ``window``-day mean; ``full`` uses one fit and
    one mean for the whole sample.  Undefined days are NaN.
    """
    r, rm = _returns_by_position(series)
    vol = np.asarray(series.volume, dtype=float)
    n = len(series)
    ar = np.full(n, np.nan)
    av = np.full(n, np.nan)
    if mode == "full":
        fit = fit_market_model(r[1:], rm[1:])
        ar[1:] = r[1:] - fit.alpha - fit.beta * rm[1:]
        av[:] = vol / vol.mean()
        return ar, av
    for p in range(1, n):
        if p - window >= 1:
            sl = slice(p - window, p)
            try:
                fit = fit_market_model(r[sl], rm[sl])
            except ValueError:
                continue
            ar[p] = r[p] - fit.alpha - fit.beta * rm[p]
    for p in range(window, n):
        base = vol[p - window:p].mean()
        if base > 0:
            av[p] = vol[p] / base
    return ar, av
