"""Maximal clique search on the second-order graph and node-guided selection."""

from __future__ import annotations

import json
import time
from itertools import chain
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corr_graph import CompatibilityGraph


@dataclass(frozen=True, order=True)
class Clique:
    nodes: tuple[int, ...]
    weight: float = 0.0

    def __len__(self) -> int:
        return len(self.nodes)

    def to_json(self) -> str:
        return json.dumps({"nodes": list(self.nodes), "weight": self.weight})


@dataclass(frozen=True)
class CliqueBudget:
    max_cliques: int = 10_000_000
    time_budget: float = 10_000.0  # milliseconds

    def __post_init__(self):
        if self.max_cliques <= 0 or self.time_budget <= 0:
            raise ValueError("clique budget limits must be positive")


@dataclass(frozen=True)
class CliqueSearch:
    cliques: list[Clique]
    complete: bool

    def __iter__(self):
        return iter(self.cliques)

    def __len__(self) -> int:
        return len(self.cliques)


class _BudgetExceeded(Exception):
    pass


def _bits(x: int) -> Iterable[int]:
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def degeneracy_order(neighbors: Sequence[int]) -> list[int]:
    """Vertices in degeneracy order (repeatedly remove a minimum-degree vertex)."""
    n = len(neighbors)
    deg = [nb.bit_count() for nb in neighbors]
    buckets: dict[int, set[int]] = {}
    for v, d in enumerate(deg):
        buckets.setdefault(d, set()).add(v)
    removed = [False] * n
    order = []
    d = 0
    for _ in range(n):
        d = max(d - 1, 0)
        while not buckets.get(d):
            d += 1
        v = min(buckets[d])
        buckets[d].discard(v)
        removed[v] = True
        order.append(v)
        for u in _bits(neighbors[v]):
            if not removed[u]:
                buckets[deg[u]].discard(u)
                deg[u] -= 1
                buckets.setdefault(deg[u], set()).add(u)
    return order


def _enumerate(neighbors: list[int], budget: CliqueBudget, sink: list[tuple[int, ...]]) -> None:
    deadline = time.perf_counter() + budget.time_budget / 1000.0
    cap = budget.max_cliques
    r: list[int] = []
    frames: list[list[int]] = []

    def push(p: int, x: int) -> bool:
        if not p:
            if not x:
                sink.append(tuple(sorted(r)))
                if len(sink) >= cap:
                    raise _BudgetExceeded
            return False
        if time.perf_counter() > deadline:
            raise _BudgetExceeded
        # Tomita pivot: the vertex of P | X covering most of P
        best, pivot = -1, 0
        for u in _bits(p | x):
            c = (p & neighbors[u]).bit_count()
            if c > best:
                best, pivot = c, u
        frames.append([p, x, p & ~neighbors[pivot]])
        return True

    order = degeneracy_order(neighbors)
    later = 0
    for v in order:
        later |= 1 << v
    done = 0
    for v in order:
        later &= ~(1 << v)
        nv = neighbors[v]
        if nv:
            # explicit stack: cliques can be as large as the graph
            r.append(v)
            if not push(later & nv, done & nv):
                r.pop()
            while frames:
                frame = frames[-1]
                p, x, todo = frame
                if not todo:
                    frames.pop()
                    r.pop()
                    continue
                low = todo & -todo
                u = low.bit_length() - 1
                nu = neighbors[u]
                frame[0], frame[1], frame[2] = p & ~low, x | low, todo ^ low
                r.append(u)
                if not push(p & nu, x & nu):
                    r.pop()
        done |= 1 << v


def adjacency_bitsets(adj: np.ndarray) -> list[int]:
    adj = np.asarray(adj, dtype=bool)
    out = []
    for row in adj:
        bits = 0
        for j in np.flatnonzero(row):
            bits |= 1 << int(j)
        out.append(bits)
    return out


def clique_weight(w: np.ndarray, nodes: Sequence[int]) -> float:
    """Sum of ``w`` over the internal pairs of a clique."""
    return clique_weights(w, [tuple(nodes)])[0]


def clique_weights(w: np.ndarray, cliques: Sequence[Sequence[int]]) -> list[float]:
    """Vectorized ``clique_weight`` over many cliques, grouped by size."""
    out = [0.0] * len(cliques)
    by_size: dict[int, list[int]] = {}
    for i, c in enumerate(cliques):
        by_size.setdefault(len(c), []).append(i)
    upper = np.triu(w, 1)
    for size, members in by_size.items():
        idx = np.array([cliques[i] for i in members], dtype=np.intp).reshape(len(members), size)
        sums = upper[idx[:, :, None], idx[:, None, :]].sum(axis=(1, 2))
        for i, v in zip(members, sums.tolist()):
            out[i] = v
    return out


def maximal_cliques(g, budget: CliqueBudget = CliqueBudget()) -> CliqueSearch:
    """All maximal cliques with at least one edge on ``w_sog > 0``.

    Pivoting Bron-Kerbosch over a degeneracy ordering.  When the budget runs
    out the cliques found so far are returned with ``complete=False``; each of
    them is still maximal.
    """
    if isinstance(g, CompatibilityGraph):
        w, adj = g.w_sog, g.adjacency()
    else:
        w = np.asarray(g, dtype=float)
        adj = w > 0
    adj = adj.copy()
    np.fill_diagonal(adj, False)
    neighbors = adjacency_bitsets(adj)
    found: list[tuple[int, ...]] = []
    complete = True
    try:
        _enumerate(neighbors, budget, found)
    except _BudgetExceeded:
        complete = False
    found.sort()
    cliques = [Clique(nodes, wt) for nodes, wt in zip(found, clique_weights(w, found))]
    return CliqueSearch(cliques, complete)


def node_guided_selection(cliques: Iterable[Clique], g=None) -> list[Clique]:
    """Keep, for every node, the heaviest clique containing it.

    Weights are recomputed from ``g`` when given.  Ties go to the clique with
    the lexicographically smaller node sequence.  Output is ordered by
    decreasing weight, then node sequence.
    """
    cliques = list(cliques)
    if not cliques:
        return []
    if g is not None:
        w = g.w_sog if isinstance(g, CompatibilityGraph) else np.asarray(g, dtype=float)
        weights = np.array(clique_weights(w, [c.nodes for c in cliques]))
        cliques = [Clique(c.nodes, float(wt)) for c, wt in zip(cliques, weights)]
    else:
        weights = np.array([c.weight for c in cliques], dtype=float)
    lengths = np.array([len(c) for c in cliques], dtype=np.intp)
    flat = np.fromiter(chain.from_iterable(c.nodes for c in cliques), dtype=np.intp, count=int(lengths.sum()))
    owner = np.repeat(np.arange(len(cliques)), lengths)
    col = np.arange(flat.size) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    # -1 padding puts a proper prefix before its extensions, as tuple comparison does
    padded = np.full((len(cliques), int(lengths.max())), -1, dtype=np.intp)
    padded[owner, col] = flat
    order = np.lexsort(tuple(padded[:, j] for j in range(padded.shape[1] - 1, -1, -1)) + (-weights,))
    rank = np.empty(len(cliques), dtype=np.intp)
    rank[order] = np.arange(len(cliques))
    best = np.full(int(flat.max()) + 1, len(cliques), dtype=np.intp)
    np.minimum.at(best, flat, rank[owner])
    winners = np.unique(best[best < len(cliques)])
    return [cliques[i] for i in order[winners]]


def dump_jsonl(cliques: Iterable[Clique]) -> str:
    return "".join(c.to_json() + "\n" for c in cliques)
