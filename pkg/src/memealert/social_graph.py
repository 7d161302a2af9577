"""User-interaction graphs built from conversation trees.

Every comment, whatever its depth, becomes an edge from the commenter to the
author of the submission it sits under.  Repeated interactions collapse to a
single edge and self-comments are ignored.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .data_ingest import ConversationTree, is_placeholder_user


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class UserGraph:
    day: Optional[date]
    ticker: str
    nodes: frozenset[str] = frozenset()
    edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        for src, dst in self.edges:
            if src == dst:
                raise ValueError(f"self-loop on {src}")
            if src not in self.nodes or dst not in self.nodes:
                raise ValueError(f"edge {src}->{dst} references unknown user")

    def __len__(self) -> int:
        return len(self.nodes)

    def in_degree(self) -> dict[str, int]:
        deg = dict.fromkeys(self.nodes, 0)
        for _, dst in self.edges:
            deg[dst] += 1
        return deg

    def adjacency(self) -> tuple[list[str], np.ndarray]:
        """Sorted user list and the dense 0/1 matrix a[i, j] = edge j -> i."""
        users = sorted(self.nodes)
        pos = {u: i for i, u in enumerate(users)}
        a = np.zeros((len(users), len(users)), dtype=np.int8)
        for src, dst in self.edges:
            a[pos[dst], pos[src]] = 1
        return users, a


@dataclass(frozen=True)
class InfluencerSet:
    day: Optional[date]
    members: tuple[tuple[str, float], ...] = ()
    window: Optional[tuple[date, date]] = None
    scores: dict[str, float] = field(default_factory=dict, compare=False, repr=False)

    @property
    def users(self) -> list[str]:
        return [u for u, _ in self.members]

    def __contains__(self, user: str) -> bool:
        return any(u == user for u, _ in self.members)


def reduce_trees(trees: Iterable[ConversationTree], day: Optional[date] = None,
                 ticker: str = "") -> UserGraph:
    nodes: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for tree in trees:
        hub = tree.submitter
        nodes.add(hub)
        day = day if day is not None else tree.day
        ticker = ticker or tree.ticker
        for c in tree.comments:
            nodes.add(c.author)
            if c.author != hub:
                edges.add((c.author, hub))
    return UserGraph(day, ticker, frozenset(nodes), frozenset(edges))


def qualifying_trees(trees: Sequence[ConversationTree], min_cascade: int = 10,
                     strict: bool = True) -> list[ConversationTree]:
    """Trees scoring above the day's median submission score with a large cascade."""
    if not trees:
        return []
    median = statistics.median(t.submission_score for t in trees)
    if strict:
        above = [t for t in trees if t.submission_score > median]
    else:
        above = [t for t in trees if t.submission_score >= median]
    return [t for t in above if t.n_comments >= min_cascade]


def filtered_reduce(trees: Sequence[ConversationTree], min_cascade: int = 10,
                    strict: bool = True, day: Optional[date] = None,
                    ticker: str = "") -> UserGraph:
    kept = qualifying_trees(trees, min_cascade=min_cascade, strict=strict)
    if day is None and trees:
        day = trees[0].day
    if not ticker and trees:
        ticker = trees[0].ticker
    return reduce_trees(kept, day=day, ticker=ticker)


def in_degree_centrality(graph: UserGraph) -> dict[str, float]:
    """In-degree divided by the number of users (not users - 1)."""
    n = len(graph.nodes)
    if n == 0:
        raise ValueError("in-degree centrality of an empty graph")
    return {u: d / n for u, d in graph.in_degree().items()}


def top_k_by_indegree(graph: UserGraph, k: int,
                      skip: Optional[Callable[[str], bool]] = None) -> list[str]:
    """Top-k users by centrality; ties go to the lexicographically smaller id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not graph.nodes:
        return []
    score = in_degree_centrality(graph)
    deg = graph.in_degree()
    users = [u for u in graph.nodes if skip is None or not skip(u)]
    users.sort(key=lambda u: (-score[u], -deg[u], u))
    return users[:k]


def pagerank(nodes: Iterable[str], edges: Iterable[tuple[str, str]], damping: float = 0.85,
             tol: float = 1e-9, max_iter: int = 200) -> dict[str, float]:
    """PageRank by power iteration on the unweighted graph.

    Rank mass of users without outgoing edges is spread uniformly.  Iteration
    stops once the L1 change between sweeps drops below ``tol``.
    """
    users = sorted(set(nodes))
    n = len(users)
    if n == 0:
        return {}
    pos = {u: i for i, u in enumerate(users)}
    pairs = {(pos[s], pos[d]) for s, d in edges if s != d}
    if pairs:
        src, dst = np.array(sorted(pairs)).T
    else:
        src = dst = np.zeros(0, dtype=int)
    out_deg = np.bincount(src, minlength=n).astype(float)
    weights = 1.0 / out_deg[src]
    # column-stochastic transition restricted to non-dangling sources
    m = sparse.csr_matrix((weights, (dst, src)), shape=(n, n))
    dangling = out_deg == 0

    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        prev = x
        x = damping * (m @ prev + prev[dangling].sum() / n) + (1.0 - damping) / n
        x /= x.sum()
        if np.abs(x - prev).sum() < tol:
            return dict(zip(users, x.tolist()))
    raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations")


def union_graph(graphs: Iterable[UserGraph], ticker: str = "") -> UserGraph:
    nodes: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for g in graphs:
        nodes |= g.nodes
        edges |= g.edges
        ticker = ticker or g.ticker
    return UserGraph(None, ticker, frozenset(nodes), frozenset(edges))


def windowed_pagerank(days: Sequence[UserGraph], k: int = 20, damping: float = 0.85,
                      tol: float = 1e-9, max_iter: int = 200, day: Optional[date] = None,
                      skip: Optional[Callable[[str], bool]] = is_placeholder_user,
                      ) -> InfluencerSet:
    """Top-k PageRank users on the union of a window of daily graphs."""
    union = union_graph(days)
    dated = [g.day for g in days if g.day is not None]
    window = (min(dated), max(dated)) if dated else None
    if not union.nodes:
        return InfluencerSet(day, (), window)
    scores = pagerank(union.nodes, union.edges, damping=damping, tol=tol, max_iter=max_iter)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    if skip is not None:
        ranked = [kv for kv in ranked if not skip(kv[0])]
    return InfluencerSet(day, tuple(ranked[:k]), window, scores)


def branching_number(tree: ConversationTree) -> float:
    """Non-root nodes over nodes with at least one child; 0 for a bare submission."""
    if not tree.comments:
        return 0.0
    parents = {c.parent_id for c in tree.comments}
    return tree.n_comments / len(parents)


def average_branching_number(trees: Sequence[ConversationTree]) -> float:
    if not trees:
        return 0.0
    return float(np.mean([branching_number(t) for t in trees]))


def write_edge_list(graphs: Iterable[UserGraph], fh) -> None:
    fh.write("day,ticker,src,dst\n")
    for g in graphs:
        for src, dst in sorted(g.edges):
            fh.write(f"{g.day},{g.ticker},{_csv_cell(src)},{_csv_cell(dst)}\n")


def write_graph_summary(graphs: Iterable[UserGraph], fh, k: int = 10) -> None:
    fh.write("day,nodes,edges,top10_indegree\n")
    for g in graphs:
        top = top_k_by_indegree(g, k) if g.nodes else []
        fh.write(f"{g.day},{len(g.nodes)},{len(g.edges)},{_csv_cell(';'.join(top))}\n")


def _csv_cell(value: str) -> str:
    if any(ch in value for ch in ',"\n'):
        return '"' + value.replace('"', '""') + '"'
    return value
