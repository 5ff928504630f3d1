"""Graph machinery for peer selection.

Maximum-cardinality matching on general graphs (Edmonds' blossom algorithm
seeded by a greedy pass), recently-connected-edge connectivity tests,
cross-component bridging, unmatched-worker fallback, and the stateful
per-round selectors built from them.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    AdjacencyMatrix,
    BandwidthMatrix,
    GossipMatrix,
    Matching,
    TimestampMatrix,
)
from .errors import ValidationError


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: AdjacencyMatrix

    def __post_init__(self) -> None:
        if self.adjacency.n != self.n:
            raise ValidationError("adjacency size does not match n")

    @classmethod
    def from_bool(cls, edges: np.ndarray) -> "Graph":
        adj = AdjacencyMatrix(np.asarray(edges, dtype=bool))
        return cls(adj.n, adj)

    @classmethod
    def from_edges(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "Graph":
        return cls(n, AdjacencyMatrix.from_pairs(n, pairs))

    def neighbor_lists(self) -> list[list[int]]:
        e = self.adjacency.edges
        return [np.nonzero(e[v])[0].tolist() for v in range(self.n)]


def _augmenting_pass(n: int, adj: Sequence[Sequence[int]], match: list[int], root: int) -> bool:
    """Grow an alternating tree from `root`; contract blossoms; flip on success."""
    used = [False] * n
    parent = [-1] * n
    base = list(range(n))
    used[root] = True
    queue = deque([root])

    def lowest_common_base(a: int, b: int) -> int:
        seen = [False] * n
        while True:
            a = base[a]
            seen[a] = True
            if match[a] == -1:
                break
            a = parent[match[a]]
        while True:
            b = base[b]
            if seen[b]:
                return b
            b = parent[match[b]]

    def mark_path(v: int, stem: int, child: int, in_blossom: list[bool]) -> None:
        while base[v] != stem:
            in_blossom[base[v]] = True
            in_blossom[base[match[v]]] = True
            parent[v] = child
            child = match[v]
            v = parent[match[v]]

    while queue:
        v = queue.popleft()
        for to in adj[v]:
            if base[v] == base[to] or match[v] == to:
                continue
            if to == root or (match[to] != -1 and parent[match[to]] != -1):
                # odd cycle: contract the blossom to its base
                stem = lowest_common_base(v, to)
                in_blossom = [False] * n
                mark_path(v, stem, to, in_blossom)
                mark_path(to, stem, v, in_blossom)
                for i in range(n):
                    if in_blossom[base[i]]:
                        base[i] = stem
                        if not used[i]:
                            used[i] = True
                            queue.append(i)
            elif parent[to] == -1:
                parent[to] = v
                if match[to] == -1:
                    # augmenting path found: flip matched/unmatched edges
                    u = to
                    while u != -1:
                        pv = parent[u]
                        nxt = match[pv]
                        match[u] = pv
                        match[pv] = u
                        u = nxt
                    return True
                used[match[to]] = True
                queue.append(match[to])
    return False


def _max_matching_order(g: Graph, order: Sequence[int], adj: Sequence[Sequence[int]]) -> Matching:
    n = g.n
    match = [-1] * n
    # greedy seed: cheap, and already maximum on dense graphs
    for v in order:
        if match[v] == -1:
            for u in adj[v]:
                if match[u] == -1:
                    match[v] = u
                    match[u] = v
                    break
    for v in order:
        if match[v] == -1:
            _augmenting_pass(n, adj, match, v)
    pairs = {(min(v, match[v]), max(v, match[v])) for v in range(n) if match[v] != -1}
    return Matching.from_pairs(n, pairs)


def max_matching(g: Graph) -> Matching:
    """Maximum-cardinality matching (deterministic processing order)."""
    return _max_matching_order(g, range(g.n), g.neighbor_lists())


def randomly_max_match(g: Graph, rng: random.Random) -> Matching:
    """Maximum-cardinality matching under a uniformly random vertex order.

    Both the root processing order and every neighbour list are permuted, so
    any maximum matching reachable under some order has positive probability.
    """
    order = list(range(g.n))
    rng.shuffle(order)
    adj = g.neighbor_lists()
    for lst in adj:
        rng.shuffle(lst)
    return _max_matching_order(g, order, adj)


def _components(n: int, edges: np.ndarray) -> np.ndarray:
    """Union-find component label per vertex for a boolean adjacency."""
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    ii, jj = np.nonzero(np.triu(edges, 1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri
    return np.array([find(v) for v in range(n)])


def rc_edges(r: TimestampMatrix, t_thres: int, t: int) -> np.ndarray:
    """Boolean adjacency of recently connected pairs: R_ij > t - t_thres."""
    q = r.last_round > (t - t_thres)
    np.fill_diagonal(q, False)
    return q


def if_connected(r: TimestampMatrix, t_thres: int, t: int) -> bool:
    """Whether the recently-connected graph spans all workers."""
    q = rc_edges(r, t_thres, t)
    return bool(len(np.unique(_components(r.n, q))) == 1)


def get_over_time_matrix(
    r: TimestampMatrix, available: AdjacencyMatrix, t_thres: int, t: int
) -> AdjacencyMatrix:
    """Bridging candidates: available edges joining distinct RC components."""
    labels = _components(r.n, rc_edges(r, t_thres, t))
    cross = labels[:, None] != labels[None, :]
    return AdjacencyMatrix(cross & available.edges)


def get_unmatch(b: BandwidthMatrix, m: Matching) -> AdjacencyMatrix:
    """Positive-bandwidth edges restricted to the unmatched workers."""
    free = np.zeros(b.n, dtype=bool)
    free[list(m.unmatched)] = True
    e = (b.speeds > 0) & free[:, None] & free[None, :]
    np.fill_diagonal(e, False)
    return AdjacencyMatrix(e)


def generate_gossip_matrix(
    b: BandwidthMatrix,
    b_star: AdjacencyMatrix,
    r: TimestampMatrix,
    t_thres: int,
    n: int,
    t: int,
    rng: random.Random,
) -> tuple[GossipMatrix, Matching]:
    """One round of peer selection.

    If the recently-connected graph is still connected, match on the
    bandwidth-filtered graph; otherwise match on bridging edges that join the
    stale components.  Workers left over after the first match get a second
    randomised match over the full positive-bandwidth graph.  The caller owns
    the timestamp matrix and records the matched pairs at round t.
    """
    if n < 2:
        raise ValidationError(f"need at least 2 workers, got {n}")
    if b.n != n or b_star.n != n or r.n != n:
        raise ValidationError("matrix sizes do not match n")

    if if_connected(r, t_thres, t):
        candidates = b_star
    else:
        candidates = get_over_time_matrix(r, b.positive_edges(), t_thres, t)

    match = randomly_max_match(Graph(n, candidates), rng)
    if len(match) < n // 2:
        fallback = get_unmatch(b, match)
        extra = randomly_max_match(Graph(n, fallback), rng)
        match = Matching.from_pairs(n, match.pairs | extra.pairs)

    return GossipMatrix.from_matching(match), match


class AdaptiveSelector:
    """Stateful wrapper around generate_gossip_matrix; owns R and the round clock."""

    def __init__(
        self,
        b: BandwidthMatrix,
        b_star: AdjacencyMatrix,
        t_thres: int,
        rng: random.Random,
    ) -> None:
        if t_thres < 1:
            raise ValidationError(f"t_thres must be >= 1, got {t_thres}")
        self.b = b
        self.b_star = b_star
        self.t_thres = t_thres
        self.rng = rng
        self.r = TimestampMatrix.initial(b.n, t_thres)
        self.t = 0

    @property
    def n(self) -> int:
        return self.b.n

    @property
    def suggested_warmup(self) -> int:
        return 10 * self.t_thres

    def next_round(self) -> tuple[GossipMatrix, Matching]:
        w, m = generate_gossip_matrix(
            self.b, self.b_star, self.r, self.t_thres, self.n, self.t, self.rng
        )
        self.r = self.r.with_pairs(m.pairs, self.t)
        self.t += 1
        return w, m


class RandomSelector:
    """Bandwidth-agnostic baseline: random maximum matching on positive edges."""

    suggested_warmup = 0

    def __init__(self, b: BandwidthMatrix, rng: random.Random) -> None:
        self.graph = Graph(b.n, b.positive_edges())
        self.rng = rng
        self.t = 0

    @property
    def n(self) -> int:
        return self.graph.n

    def next_round(self) -> tuple[GossipMatrix, Matching]:
        m = randomly_max_match(self.graph, self.rng)
        self.t += 1
        return GossipMatrix.from_matching(m), m


class RingSelector:
    """Fixed ring 0 -> 1 -> ... -> n-1 -> 0, alternating its two perfect pairings."""

    suggested_warmup = 0

    def __init__(self, n: int) -> None:
        if n < 2 or n % 2 != 0:
            raise ValidationError(f"ring selector needs an even n >= 2, got {n}")
        self.n = n
        self.t = 0

    def next_round(self) -> tuple[GossipMatrix, Matching]:
        start = self.t % 2
        pairs = [(i, (i + 1) % self.n) for i in range(start, self.n + start - 1, 2)]
        m = Matching.from_pairs(self.n, pairs)
        self.t += 1
        return GossipMatrix.from_matching(m), m
