"""Loaders for forum thread dumps, market prices and exogenous daily series.

Thread dumps are line-delimited JSON (or CSV with the same header), one row per
message.  Each row repeats the submission-level fields so a tree can be rebuilt
from any subset of its rows.  Recognised columns::

    title, body, name, parent_id, author_name, depth, score, score_submission,
    upvote_ratio, time_submission, time_comment, num_comment, flair,
    distinguished

plus three optional extension columns: ``submission_id`` (tree key),
``author`` (the commenter) and ``distinguished_submission``.  ``name`` is the
comment id (``t1_`` prefixed) and ``parent_id`` is either another comment id or
the submission id (``t3_`` prefixed).
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import IO, Iterable, Iterator, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, IO[str], IO[bytes]]

MODERATOR = "moderator"
PLACEHOLDER_AUTHORS = frozenset({"", "[deleted]", "[removed]", "none", "null"})
PLACEHOLDER_PREFIX = "[deleted]:"

DUMP_FIELDS = (
    "submission_id", "title", "body", "name", "parent_id", "author_name", "author",
    "depth", "score", "score_submission", "upvote_ratio", "time_submission",
    "time_comment", "num_comment", "flair", "distinguished", "distinguished_submission",
)


class DataError(ValueError):
    """Raised for unusable input files (bad prices, duplicate dates, ...)."""


@contextlib.contextmanager
def open_text(source: Source) -> Iterator[IO[str]]:
    """Yield a UTF-8 text handle for a path or an already-open stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            yield fh
    elif isinstance(source, io.TextIOBase):
        yield source
    else:
        yield io.TextIOWrapper(source, encoding="utf-8", newline="")


def is_placeholder_user(user: str) -> bool:
    """True for the synthetic ids given to deleted/removed accounts."""
    return user.startswith(PLACEHOLDER_PREFIX)


def parse_timestamp(value) -> datetime:
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(value, tz=timezone.utc)
    text = str(value).strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_date(value: str) -> date:
    return date.fromisoformat(str(value).strip()[:10])


@dataclass(frozen=True)
class MessageRecord:
    message_id: str
    parent_id: Optional[str]
    author: str
    submission_author: str
    created_at: datetime
    depth: int = 0
    score: int = 0
    submission_score: int = 0
    title: str = ""
    body: str = ""
    upvote_ratio: Optional[float] = None
    num_comments: int = 0
    flair: Optional[str] = None
    distinguished: Optional[str] = None

    def __post_init__(self):
        if (self.depth == 0) != (self.parent_id is None):
            raise ValueError(f"{self.message_id}: depth 0 iff no parent")
        if self.num_comments < 0:
            raise ValueError(f"{self.message_id}: negative num_comments")
        if self.upvote_ratio is not None and not 0.0 <= self.upvote_ratio <= 1.0:
            raise ValueError(f"{self.message_id}: upvote_ratio outside [0, 1]")

    @property
    def is_bot(self) -> bool:
        return (self.distinguished or "").lower() == MODERATOR


@dataclass(frozen=True)
class ConversationTree:
    """A submission (the root) and its comment forest."""

    tree_id: str
    ticker: str
    day: date
    root: MessageRecord
    comments: tuple[MessageRecord, ...] = ()

    def __post_init__(self):
        if self.root.depth != 0:
            raise ValueError(f"tree {self.tree_id}: root must have depth 0")
        known = {self.root.message_id}
        # comments are stored parent-before-child
        for c in self.comments:
            if c.parent_id not in known:
                raise ValueError(f"tree {self.tree_id}: {c.message_id} has no parent in tree")
            if c.message_id in known:
                raise ValueError(f"tree {self.tree_id}: duplicate message {c.message_id}")
            known.add(c.message_id)

    @property
    def nodes(self) -> tuple[MessageRecord, ...]:
        return (self.root, *self.comments)

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        """child -> parent message id pairs."""
        return tuple((c.message_id, c.parent_id) for c in self.comments)

    @property
    def n_comments(self) -> int:
        return len(self.comments)

    @property
    def submitter(self) -> str:
        return self.root.author

    @property
    def submission_score(self) -> int:
        return self.root.score

    def users(self) -> set[str]:
        return {m.author for m in self.nodes}


@dataclass
class ParseResult:
    trees: list[ConversationTree] = field(default_factory=list)
    rows: int = 0
    dropped: int = 0
    repaired: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def note(self, line: int, msg: str) -> None:
        self.diagnostics.append(f"line {line}: {msg}")


def _blank(value) -> bool:
    return value is None or (isinstance(value, str) and value.strip() == "")


def _as_int(value, default: int = 0) -> int:
    if _blank(value):
        return default
    return int(float(value))


def _as_opt_float(value) -> Optional[float]:
    if _blank(value):
        return None
    return float(value)


def _as_opt_str(value) -> Optional[str]:
    if _blank(value):
        return None
    return str(value)


def _user(name, message_id: str) -> str:
    if name is None or str(name).strip().lower() in PLACEHOLDER_AUTHORS:
        return PLACEHOLDER_PREFIX + message_id
    return str(name).strip()


def _with_prefix(value: str, prefix: str) -> str:
    value = str(value).strip()
    return value if value.startswith(("t1_", "t3_")) else prefix + value


def _iter_rows(fh: IO[str]) -> Iterator[tuple[int, Optional[dict], Optional[str]]]:
    """Yield (line number, row dict or None, error message)."""
    first = fh.readline()
    while first and not first.strip():
        first = fh.readline()
    if not first:
        return
    if first.lstrip().startswith("{"):
        lines = [first]
        lines.extend(fh)
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, None, f"malformed JSON ({exc.msg})"
                continue
            if not isinstance(row, dict):
                yield lineno, None, "record is not an object"
                continue
            yield lineno, row, None
    else:
        reader = csv.DictReader(io.StringIO(first + fh.read()))
        for row in reader:
            yield reader.line_num, row, None


def _tree_key(row: dict) -> Optional[str]:
    if not _blank(row.get("submission_id")):
        return _with_prefix(row["submission_id"], "t3_")
    if _blank(row.get("author_name")) or _blank(row.get("time_submission")):
        return None
    digest = hashlib.sha1(
        f"{row['author_name']}|{row['time_submission']}|{row.get('title') or ''}".encode()
    ).hexdigest()[:12]
    return "t3_" + digest


def parse_thread_dump(source: Source, ticker: str) -> ParseResult:
    """Rebuild conversation trees from a thread dump.

    Malformed rows are reported per line rather than aborting the parse.
    Comments whose parent is missing (or that sit on a parent cycle) are
    attached to the submission and counted in ``repaired``.
    """
    result = ParseResult()
    grouped: dict[str, list[tuple[int, dict]]] = defaultdict(list)
    with open_text(source) as fh:
        for lineno, row, err in _iter_rows(fh):
            result.rows += 1
            if err:
                result.note(lineno, err)
                result.dropped += 1
                continue
            key = _tree_key(row)
            if key is None:
                result.note(lineno, "missing submission id")
                result.dropped += 1
                continue
            grouped[key].append((lineno, row))

    for tree_id, rows in grouped.items():
        tree = _assemble_tree(tree_id, ticker, rows, result)
        if tree is not None:
            result.trees.append(tree)
    result.trees.sort(key=lambda t: (t.day, t.root.created_at, t.tree_id))
    return result


def _assemble_tree(tree_id: str, ticker: str, rows: list[tuple[int, dict]],
                   result: ParseResult) -> Optional[ConversationTree]:
    lineno, head = rows[0]
    try:
        submitted = parse_timestamp(head["time_submission"])
        root_author = _user(head.get("author_name"), tree_id)
        root_distinguished = _as_opt_str(head.get("distinguished_submission"))
        for ln, row in rows:
            if _is_submission_row(row) and _blank(root_distinguished):
                root_distinguished = _as_opt_str(row.get("distinguished"))
        root = MessageRecord(
            message_id=tree_id,
            parent_id=None,
            author=root_author,
            submission_author=root_author,
            created_at=submitted,
            depth=0,
            score=_as_int(head.get("score_submission")),
            submission_score=_as_int(head.get("score_submission")),
            title=head.get("title") or "",
            upvote_ratio=_as_opt_float(head.get("upvote_ratio")),
            num_comments=_as_int(head.get("num_comment")),
            flair=_as_opt_str(head.get("flair")),
            distinguished=root_distinguished,
        )
    except (KeyError, TypeError, ValueError) as exc:
        result.note(lineno, f"bad submission fields ({exc})")
        result.dropped += len(rows)
        return None

    raw: dict[str, tuple[str, MessageRecord]] = {}
    for ln, row in rows:
        if _is_submission_row(row):
            continue
        if _blank(row.get("name")) or _blank(row.get("parent_id")):
            result.note(ln, "comment row without name/parent_id")
            result.dropped += 1
            continue
        mid = _with_prefix(row["name"], "t1_")
        if mid in raw or mid == tree_id:
            result.note(ln, f"duplicate message id {mid}")
            result.dropped += 1
            continue
        try:
            created = (parse_timestamp(row["time_comment"])
                       if not _blank(row.get("time_comment")) else submitted)
            rec = MessageRecord(
                message_id=mid,
                parent_id=tree_id,  # fixed up below
                author=_user(row.get("author"), mid),
                submission_author=root_author,
                created_at=created,
                depth=1,
                score=_as_int(row.get("score")),
                submission_score=root.score,
                body=row.get("body") or "",
                num_comments=root.num_comments,
                flair=root.flair,
                distinguished=_as_opt_str(row.get("distinguished")),
            )
        except (TypeError, ValueError) as exc:
            result.note(ln, f"bad comment fields ({exc})")
            result.dropped += 1
            continue
        raw[mid] = (_with_prefix(row["parent_id"], "t1_"), rec)

    parents: dict[str, str] = {}
    for mid, (parent, _) in raw.items():
        if parent.startswith("t3_"):
            parents[mid] = tree_id
        elif parent in raw:
            parents[mid] = parent
        else:
            parents[mid] = tree_id
            result.repaired += 1
    result.repaired += _break_cycles(parents, tree_id)

    comments = _ordered_with_depth(
        {mid: rec for mid, (_, rec) in raw.items()}, parents, tree_id)
    return ConversationTree(tree_id, ticker, submitted.date(), root, comments)


def _is_submission_row(row: dict) -> bool:
    depth = row.get("depth")
    if not _blank(depth):
        try:
            return int(float(depth)) == 0
        except ValueError:
            return False
    return _blank(row.get("name")) and _blank(row.get("parent_id"))


def _break_cycles(parents: dict[str, str], root_id: str) -> int:
    """Re-attach comments that cannot reach the root; returns the count."""
    status: dict[str, bool] = {root_id: True}
    fixed = 0
    for start in list(parents):
        path = []
        node = start
        seen = set()
        while node not in status and node not in seen:
            seen.add(node)
            path.append(node)
            node = parents[node]
        ok = status.get(node, False)
        if not ok:
            # node is on a cycle: cut it loose at the first repeated node
            parents[node] = root_id
            fixed += 1
        for p in path:
            status[p] = True
    return fixed


def _ordered_with_depth(records: dict[str, MessageRecord], parents: dict[str, str],
                        root_id: str) -> tuple[MessageRecord, ...]:
    children: dict[str, list[str]] = defaultdict(list)
    for mid in records:
        children[parents[mid]].append(mid)
    out = []
    stack = [(root_id, 0)]
    while stack:
        node, depth = stack.pop()
        for child in reversed(children.get(node, ())):
            out.append(dataclasses.replace(records[child], parent_id=node, depth=depth + 1))
            stack.append((child, depth + 1))
    return tuple(out)


def thread_rows(trees: Iterable[ConversationTree]) -> Iterator[dict]:
    """Dump rows for trees: one submission row, then one row per comment."""
    for tree in trees:
        root = tree.root
        shared = {
            "submission_id": tree.tree_id,
            "title": root.title,
            "author_name": None if is_placeholder_user(root.author) else root.author,
            "score_submission": root.score,
            "upvote_ratio": root.upvote_ratio,
            "time_submission": root.created_at.isoformat(),
            "num_comment": root.num_comments,
            "flair": root.flair,
            "distinguished_submission": root.distinguished,
        }
        yield {**shared, "depth": 0, "body": "", "name": None, "parent_id": None,
               "author": None, "score": root.score, "time_comment": None,
               "distinguished": root.distinguished}
        for c in tree.comments:
            yield {
                **shared,
                "body": c.body,
                "name": c.message_id,
                "parent_id": c.parent_id,
                "author": None if is_placeholder_user(c.author) else c.author,
                "depth": c.depth,
                "score": c.score,
                "time_comment": c.created_at.isoformat(),
                "distinguished": c.distinguished,
            }


def write_thread_dump(trees: Iterable[ConversationTree], fh: IO[str]) -> None:
    """Serialise trees as line-delimited JSON readable by parse_thread_dump."""
    for row in thread_rows(trees):
        fh.write(json.dumps({k: row[k] for k in DUMP_FIELDS}) + "\n")


def write_thread_csv(trees: Iterable[ConversationTree], fh: IO[str]) -> None:
    """Same rows as write_thread_dump, as CSV with the dump header."""
    writer = csv.DictWriter(fh, fieldnames=DUMP_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in thread_rows(trees):
        writer.writerow({k: "" if v is None else v for k, v in row.items()})


def filter_bots(trees: Iterable[ConversationTree]) -> list[ConversationTree]:
    """Remove moderator-distinguished messages.

    A moderator submission drops its whole tree; the children of a moderator
    comment are re-attached to that comment's nearest surviving ancestor.
    """
    out = []
    for tree in trees:
        if tree.root.is_bot:
            continue
        removed = {c.message_id: c.parent_id for c in tree.comments if c.is_bot}
        if not removed:
            out.append(tree)
            continue
        kept = {}
        parents = {}
        for c in tree.comments:
            if c.message_id in removed:
                continue
            parent = c.parent_id
            while parent in removed:
                parent = removed[parent]
            kept[c.message_id] = c
            parents[c.message_id] = parent
        comments = _ordered_with_depth(kept, parents, tree.tree_id)
        out.append(dataclasses.replace(tree, comments=comments))
    return out


# ----------------------------------------------------------------------------
# market and exogenous series


@dataclass(frozen=True)
class MarketSeries:
    """Daily open/close/volume for one ticker, optionally with index returns."""

    ticker: str
    dates: tuple[date, ...]
    open: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    market_return: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.dates)

    def position(self, day: date) -> int:
        try:
            return self.dates.index(day)
        except ValueError:
            raise KeyError(f"{day} is not a trading day in {self.ticker} data") from None

    def with_market_returns(self, index: dict[date, float]) -> "MarketSeries":
        missing = [d for d in self.dates if d not in index]
        if missing:
            raise DataError(f"index returns missing for {len(missing)} dates, first {missing[0]}")
        rm = np.array([index[d] for d in self.dates], dtype=float)
        return dataclasses.replace(self, market_return=rm)


def _read_csv(source: Source, required: tuple[str, ...]) -> list[tuple[int, dict]]:
    with open_text(source) as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"missing columns: {', '.join(missing)}")
        rows = []
        for row in reader:
            rows.append((reader.line_num, {k.strip(): v for k, v in row.items() if k}))
        return rows


def load_market_csv(source: Source, ticker: str = "") -> MarketSeries:
    """Read ``date,open,close,volume[,market_return]`` into a MarketSeries."""
    rows = _read_csv(source, ("date", "open", "close", "volume"))
    seen: dict[date, int] = {}
    parsed = []
    for line, row in rows:
        try:
            day = parse_date(row["date"])
            o, c, v = float(row["open"]), float(row["close"]), float(row["volume"])
        except (TypeError, ValueError) as exc:
            raise DataError(f"line {line}: unparseable row ({exc})") from None
        if day in seen:
            raise DataError(f"line {line}: duplicate date {day}")
        if o <= 0 or c <= 0:
            raise DataError(f"line {line}: non-positive price on {day}")
        if v < 0:
            raise DataError(f"line {line}: negative volume on {day}")
        seen[day] = line
        rm = row.get("market_return", row.get("return"))
        parsed.append((day, o, c, v, None if _blank(rm) else float(rm)))
    parsed.sort(key=lambda r: r[0])
    rms = [r[4] for r in parsed]
    market = None
    if parsed and all(x is not None for x in rms):
        market = np.array(rms, dtype=float)
    return MarketSeries(
        ticker=ticker,
        dates=tuple(r[0] for r in parsed),
        open=np.array([r[1] for r in parsed], dtype=float),
        close=np.array([r[2] for r in parsed], dtype=float),
        volume=np.array([r[3] for r in parsed], dtype=float),
        market_return=market,
    )


def load_index_csv(source: Source) -> dict[date, float]:
    """Read ``date,return`` market index returns."""
    out = {}
    for line, row in _read_csv(source, ("date", "return")):
        day = parse_date(row["date"])
        if day in out:
            raise DataError(f"line {line}: duplicate date {day}")
        out[day] = float(row["return"])
    return out


def daily_returns(series: Union[MarketSeries, np.ndarray, list]) -> np.ndarray:
    """Simple close-to-close returns; one shorter than the price series."""
    close = series.close if isinstance(series, MarketSeries) else np.asarray(series, dtype=float)
    if close.size < 2:
        raise DataError("need at least two prices to compute returns")
    return np.diff(close) / close[:-1]


@dataclass(frozen=True)
class ExogenousSeries:
    dates: tuple[date, ...]
    outage_reports: np.ndarray
    subscriber_rank: np.ndarray
    subscribers: np.ndarray
    avg_user_rank: np.ndarray

    @property
    def outage_flag(self) -> np.ndarray:
        return (self.outage_reports != 0).astype(float)

    def as_dict(self) -> dict[str, dict[date, float]]:
        cols = {
            "outage_reports": self.outage_reports,
            "subscriber_rank": self.subscriber_rank,
            "subscribers": self.subscribers,
            "avg_user_rank": self.avg_user_rank,
            "outage_flag": self.outage_flag,
        }
        return {k: dict(zip(self.dates, map(float, v))) for k, v in cols.items()}


def load_exogenous_csv(source: Source) -> ExogenousSeries:
    cols = ("date", "outage_reports", "subscriber_rank", "subscribers", "avg_user_rank")
    rows = _read_csv(source, cols)
    data: dict[date, tuple[float, ...]] = {}
    for line, row in rows:
        day = parse_date(row["date"])
        if day in data:
            raise DataError(f"line {line}: duplicate date {day}")
        vals = tuple(float(row[c]) for c in cols[1:])
        if vals[0] < 0 or vals[2] < 0:
            raise DataError(f"line {line}: negative count on {day}")
        if vals[1] < 1 or vals[3] < 1:
            raise DataError(f"line {line}: rank below 1 on {day}")
        data[day] = vals
    days = tuple(sorted(data))
    arr = np.array([data[d] for d in days], dtype=float).reshape(len(days), 4)
    return ExogenousSeries(days, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def load_activity_totals(source: Source) -> dict[date, tuple[int, int]]:
    """Whole-forum daily totals: ``date,total_submissions,total_users``."""
    out = {}
    for line, row in _read_csv(source, ("date", "total_submissions", "total_users")):
        day = parse_date(row["date"])
        if day in out:
            raise DataError(f"line {line}: duplicate date {day}")
        subs, users = int(row["total_submissions"]), int(row["total_users"])
        if subs < 0 or users < 0:
            raise DataError(f"line {line}: negative total on {day}")
        out[day] = (subs, users)
    return out
