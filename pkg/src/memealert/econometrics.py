"""OLS with Newey-West (Bartlett kernel) covariance and the regression specs.

Series live in a :class:`SeriesStore` sharing one trading-day index.  A
:class:`RegressionSpec` names the dependent series and a list of terms; each
term is a series with optional first difference and lag, or the product of
two such terms.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


class DesignError(ValueError):
    pass


class CollinearityError(DesignError):
    pass


@dataclass(frozen=True)
class Term:
    series: str
    diff: bool = False
    lag: int = 0
    times: Optional["Term"] = None

    @property
    def name(self) -> str:
        base = f"d.{self.series}" if self.diff else self.series
        if self.lag:
            base = f"L{self.lag}.{base}"
        if self.times is not None:
            base = f"{base}*{self.times.name}"
        return base

    def sources(self) -> set[str]:
        out = {self.series}
        if self.times is not None:
            out |= self.times.sources()
        return out


def level(name: str) -> Term:
    return Term(name)


def diff(name: str) -> Term:
    return Term(name, diff=True)


def lag(term, k: int = 1) -> Term:
    term = term if isinstance(term, Term) else Term(term)
    return Term(term.series, term.diff, term.lag + k, term.times)


def interaction(a, b) -> Term:
    a = a if isinstance(a, Term) else Term(a)
    b = b if isinstance(b, Term) else Term(b)
    return Term(a.series, a.diff, a.lag, b)


OUTAGE_DUMMY = "outage_flag"


@dataclass(frozen=True)
class RegressionSpec:
    name: str
    dependent: str
    regressors: tuple[Term, ...]
    hac_lags: Optional[int] = None  # None: automatic rule
    title: str = ""

    def __post_init__(self):
        names = [t.name for t in self.regressors]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise DesignError(f"{self.name}: duplicate regressors {sorted(dup)}")
        declared = {t.name for t in self.regressors if t.times is None} | {OUTAGE_DUMMY}
        for t in self.regressors:
            if t.times is None:
                continue
            for operand in (Term(t.series, t.diff, t.lag), t.times):
                if operand.name not in declared:
                    raise DesignError(f"{self.name}: interaction operand {operand.name} "
                                      "is not a declared regressor")


_TERM_RE = re.compile(r"^(?:(diff|lag)\((.+)\)|([A-Za-z_][\w.]*))$")


def parse_term(text: str) -> Term:
    text = text.strip()
    if "*" in text:
        a, b = text.split("*", 1)
        return interaction(parse_term(a), parse_term(b))
    m = _TERM_RE.match(text)
    if not m:
        raise DesignError(f"cannot parse regressor {text!r}")
    fn, inner, bare = m.groups()
    if bare:
        return Term(bare)
    if fn == "diff":
        t = parse_term(inner)
        return Term(t.series, True, t.lag)
    arg, _, k = inner.rpartition(",")
    if not arg:
        arg, k = inner, "1"
    return lag(parse_term(arg), int(k))


def _split_terms(text: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch in ",+" and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def parse_spec(text: str, name: str = "") -> RegressionSpec:
    """Read a ``key = value`` spec document (name, dependent, regressors, hac_lags)."""
    kv = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DesignError(f"spec line without '=': {line!r}")
        kv[key.strip()] = value.strip()
    if "dependent" not in kv or "regressors" not in kv:
        raise DesignError("spec needs 'dependent' and 'regressors'")
    hac = kv.get("hac_lags", "auto")
    return RegressionSpec(
        name=kv.get("name", name),
        dependent=kv["dependent"],
        regressors=tuple(parse_term(t) for t in _split_terms(kv["regressors"])),
        hac_lags=None if hac in ("", "auto") else int(hac),
        title=kv.get("title", ""),
    )


def format_term(term: Term) -> str:
    inner = f"diff({term.series})" if term.diff else term.series
    if term.lag:
        inner = f"lag({inner},{term.lag})"
    if term.times is not None:
        inner = f"{inner}*{format_term(term.times)}"
    return inner


def format_spec(spec: RegressionSpec) -> str:
    lags = "auto" if spec.hac_lags is None else str(spec.hac_lags)
    return (f"name = {spec.name}\ntitle = {spec.title}\ndependent = {spec.dependent}\n"
            f"regressors = {', '.join(format_term(t) for t in spec.regressors)}\n"
            f"hac_lags = {lags}\n")


# contemporaneous abnormal-return regression
AR_CONTEMPORANEOUS = RegressionSpec(
    "ar_contemporaneous", "AR",
    (diff("volume"), diff("open"), lag("AR", 1), level("outage_reports"),
     level("subscriber_rank"), level("abn"), level("outage_flag"),
     interaction("abn", "outage_flag")),
    title="Contemporaneous regression of daily abnormal return",
)
# abnormal-volume regression
AV_CONTEMPORANEOUS = RegressionSpec(
    "av_contemporaneous", "AV",
    (diff("volume"), diff("close"), lag("AV", 1), level("subscribers"),
     level("outage_flag"), interaction("subscribers", "outage_flag")),
    title="Contemporaneous regression of daily abnormal volume",
)
# predictive abnormal-return regression
PREDICTIVE = RegressionSpec(
    "ar_predictive", "AR",
    (lag(diff("volume"), 1), lag(diff("volume"), 2), lag(diff("open"), 1),
     lag(diff("open"), 2), lag("avg_user_rank", 1), lag("avg_user_rank", 2),
     level("outage_reports")),
    title="Predictive regression of daily abnormal return",
)
DEFAULT_SPECS = (AR_CONTEMPORANEOUS, AV_CONTEMPORANEOUS, PREDICTIVE)


@dataclass
class SeriesStore:
    dates: tuple[date, ...]
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_mappings(cls, dates: Sequence[date],
                      series: Mapping[str, Mapping[date, float]]) -> "SeriesStore":
        """Align date-keyed series on ``dates``; any missing date is an error."""
        bad = {}
        cols = {}
        for name, values in series.items():
            missing = [d for d in dates if d not in values]
            if missing:
                bad[name] = missing
                continue
            cols[name] = np.array([values[d] for d in dates], dtype=float)
        if bad:
            detail = "; ".join(f"{k} ({len(v)} dates, first {v[0]})" for k, v in bad.items())
            raise DesignError(f"series not aligned with the trading calendar: {detail}")
        return cls(tuple(dates), cols)

    def add(self, name: str, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.dates),):
            raise DesignError(f"series {name} has {values.size} values for {len(self.dates)} dates")
        self.columns[name] = values


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    dates: tuple[date, ...]
    dependent: str
    dropped_rows: int
    zero_columns: list[str] = field(default_factory=list)


def _term_values(store: SeriesStore, term: Term) -> np.ndarray:
    x = store.columns[term.series].copy()
    if term.diff:
        x = np.concatenate([[np.nan], np.diff(x)])
    if term.lag:
        x = np.concatenate([np.full(term.lag, np.nan), x[:-term.lag]])
    if term.times is not None:
        x = x * _term_values(store, term.times)
    return x


def build_design(store: SeriesStore, spec: RegressionSpec) -> Design:
    needed = {spec.dependent}
    for t in spec.regressors:
        needed |= t.sources()
    missing = sorted(needed - set(store.columns))
    if missing:
        raise DesignError(f"{spec.name}: missing series {', '.join(missing)}")
    y = store.columns[spec.dependent]
    cols = [_term_values(store, t) for t in spec.regressors]
    n = len(store.dates)
    X = np.column_stack([np.ones(n)] + cols) if cols else np.ones((n, 1))
    ok = np.isfinite(y) & np.isfinite(X).all(axis=1)
    X, y = X[ok], y[ok]
    names = ["const"] + [t.name for t in spec.regressors]
    zero = [nm for j, nm in enumerate(names) if j and np.all(X[:, j] == 0)]
    return Design(X, y, names, tuple(d for d, k in zip(store.dates, ok) if k),
                  spec.dependent, int(n - ok.sum()), zero)


def newey_west_lags(n: int) -> int:
    return int(math.floor(4 * (n / 100.0) ** (2.0 / 9.0)))


def white_cov(X: np.ndarray, resid: np.ndarray) -> np.ndarray:
    bread = np.linalg.inv(X.T @ X)
    xe = X * resid[:, None]
    return bread @ (xe.T @ xe) @ bread


def hac_cov(X: np.ndarray, resid: np.ndarray, lags: int) -> np.ndarray:
    """Newey-West sandwich with Bartlett weights 1 - l/(lags+1); no dof correction."""
    bread = np.linalg.inv(X.T @ X)
    xe = X * resid[:, None]
    meat = xe.T @ xe
    for l in range(1, lags + 1):
        w = 1.0 - l / (lags + 1.0)
        gamma = xe[l:].T @ xe[:-l]
        meat += w * (gamma + gamma.T)
    cov = bread @ meat @ bread
    return (cov + cov.T) / 2.0


def _dependent_columns(X: np.ndarray, names: Sequence[str]) -> list[str]:
    bad = []
    rank = 0
    for j in range(X.shape[1]):
        r = np.linalg.matrix_rank(X[:, : j + 1])
        if r == rank:
            bad.append(names[j])
        rank = r
    return bad


def regression_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


@dataclass
class RegressionResult:
    name: str
    dependent: str
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pval: np.ndarray
    n: int
    r2: float
    adj_r2: float
    aic: float
    resid: np.ndarray
    cov: np.ndarray
    hac_lags: int
    notes: list[str] = field(default_factory=list)

    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.coef.tolist()))

    def stars(self) -> list[str]:
        return [regression_stars(p) for p in self.pval]


def ols_hac(X: np.ndarray, y: np.ndarray, names: Optional[Sequence[str]] = None,
            hac_lags: Optional[int] = None, name: str = "", dependent: str = "y") -> RegressionResult:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if n <= k:
        raise DesignError(f"{name or dependent}: {n} observations for {k} coefficients")
    if np.linalg.matrix_rank(X) < k:
        bad = _dependent_columns(X, names)
        raise CollinearityError(f"{name or dependent}: collinear columns {', '.join(bad)}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    lags = newey_west_lags(n) if hac_lags is None else int(hac_lags)
    cov = hac_cov(X, resid, lags)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf * np.sign(coef)))
    p = 2.0 * stats.norm.sf(np.abs(t))
    rss = float(resid @ resid)
    yc = y - y.mean()
    tss = float(yc @ yc)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k)
    if rss > 0:
        llf = -0.5 * n * (math.log(2 * math.pi) + math.log(rss / n) + 1.0)
        aic = -2.0 * llf + 2.0 * k
    else:
        aic = -math.inf
    return RegressionResult(name, dependent, names, coef, se, t, p, n, r2, adj, aic,
                            resid, cov, lags)


def fit_spec(store: SeriesStore, spec: RegressionSpec) -> RegressionResult:
    """Build the design, drop all-zero regressors with a note, and estimate."""
    design = build_design(store, spec)
    notes = []
    X, names = design.X, design.names
    if design.zero_columns:
        keep = [j for j, nm in enumerate(names) if nm not in design.zero_columns]
        X = X[:, keep]
        names = [names[j] for j in keep]
        msg = f"dropped all-zero regressors: {', '.join(design.zero_columns)}"
        logger.warning("%s: %s", spec.name, msg)
        notes.append(msg)
    res = ols_hac(X, design.y, names, spec.hac_lags, name=spec.name, dependent=spec.dependent)
    res.notes.extend(notes)
    return res


def run_default_regressions(store: SeriesStore, ticker: str = "", meme: bool = True,
                          specs: Sequence[RegressionSpec] = DEFAULT_SPECS) -> dict[str, RegressionResult]:
    out = {}
    for spec in specs:
        res = fit_spec(store, spec)
        if spec is PREDICTIVE and not meme:
            res.notes.append("non-meme predictive regression: computed, not part of the headline report")
        out[spec.name] = res
    return out


def write_regression_report(result: RegressionResult, fh) -> None:
    fh.write("regressor,coef,tstat,pval,stars\n")
    for nm, c, t, p, s in zip(result.names, result.coef, result.tstat, result.pval, result.stars()):
        fh.write(f"{nm},{c:.10g},{t:.10g},{p:.10g},{s}\n")
    fh.write("\nn,adj_r2,aic\n")
    fh.write(f"{result.n},{result.adj_r2:.10g},{result.aic:.10g}\n")
    for note in result.notes:
        fh.write(f"# {note}\n")
