"""Shortest-path distances, K-hop support sets, binning and coverage."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .graphio import DEGREE_BINS, MolGraph

INF = -1  # sentinel for cross-component pairs; never a valid distance
GRAPHORMER_SPD_CLIP = 20


@dataclass
class SpdMatrix:
    n: int
    entries: np.ndarray  # (n, n) int64, INF across components

    def is_inf(self) -> np.ndarray:
        return self.entries == INF


@dataclass
class SupportSets:
    """Per-node neighbour lists ordered by (SPD, node index); self first."""

    neighbors: list[np.ndarray]
    spd: list[np.ndarray]
    k: int | None  # None: unbounded within the component

    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.neighbors], dtype=np.int64)

    def bins(self, k: int) -> list[np.ndarray]:
        return [np.minimum(d, k) for d in self.spd]

    def as_sets(self) -> list[set[int]]:
        return [set(int(j) for j in s) for s in self.neighbors]


def _bfs(adj: list[list[int]], source: int, depth: int | None) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if depth is not None and du >= depth:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = du + 1
                queue.append(v)
    return dist


def all_pairs_spd(g: MolGraph, clip: int | None = None) -> SpdMatrix:
    """Exact hop distances by BFS from every node; ``clip`` caps finite entries."""
    adj = g.adjacency()
    out = np.full((g.n, g.n), INF, dtype=np.int64)
    for s in range(g.n):
        for t, d in _bfs(adj, s, None).items():
            out[s, t] = d if clip is None else min(d, clip)
    return SpdMatrix(g.n, out)


def _ordered(dist: dict[int, int]) -> tuple[np.ndarray, np.ndarray]:
    items = sorted(dist.items(), key=lambda kv: (kv[1], kv[0]))
    return (np.array([j for j, _ in items], dtype=np.int64),
            np.array([d for _, d in items], dtype=np.int64))


def truncated_spd(g: MolGraph, k: int | None) -> SupportSets:
    """Support sets from depth-limited BFS (``k=None`` keeps the whole component)."""
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    adj = g.adjacency()
    nbrs, spds = [], []
    for i in range(g.n):
        j, d = _ordered(_bfs(adj, i, k))
        nbrs.append(j)
        spds.append(d)
    return SupportSets(nbrs, spds, k)


def supports_from_spd(spd: SpdMatrix, k: int | None) -> SupportSets:
    nbrs, spds = [], []
    for i in range(spd.n):
        row = spd.entries[i]
        ok = row != INF
        if k is not None:
            ok &= row <= k
        dist = {int(j): int(row[j]) for j in np.nonzero(ok)[0]}
        j, d = _ordered(dist)
        nbrs.append(j)
        spds.append(d)
    return SupportSets(nbrs, spds, k)


def spd_bin(d: int, k: int) -> int:
    if d == INF or d is None or d < 0:
        raise ValueError("cannot bin an infinite or negative distance")
    if k < 1:
        raise ValueError("k must be >= 1")
    return min(int(d), int(k))


def degree_bin(d: int) -> int:
    if d < 0:
        raise ValueError("degree must be non-negative")
    return min(int(d), DEGREE_BINS - 1)


def degree_bins(g: MolGraph) -> np.ndarray:
    return np.minimum(g.degrees(), DEGREE_BINS - 1)


def coverage(g: MolGraph, k: int | None, supports: SupportSets | None = None) -> float:
    """Mean over nodes of |S(i)|/N, as a percentage."""
    s = supports if supports is not None else truncated_spd(g, k)
    # scale first so integer-valued percentages come out exact
    return 100.0 * float(s.sizes().sum()) / (g.n * g.n)


def corpus_coverage(graphs, k: int | None) -> float:
    return float(np.median([coverage(g, k) for g in graphs]))


def shortest_path_edge_counts(g: MolGraph, n_types: int, type_of) -> np.ndarray:
    """Average count of each bond type along shortest paths, over tied paths.

    Returns an array ``(n, n, n_types)``.  Entry ``[s, t]`` averages, over every
    shortest s-t path, the per-type number of bonds on the path; the average is
    exact (path counts are propagated in BFS order, so enumeration order of
    tied paths cannot matter).
    """
    adj = g.adjacency()
    bmap = g.bond_map()
    out = np.zeros((g.n, g.n, n_types))
    for s in range(g.n):
        dist = {s: 0}
        order = [s]
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    order.append(v)
                    queue.append(v)
        paths = {s: 1.0}
        totals = {s: np.zeros(n_types)}
        for v in order[1:]:
            cnt = 0.0
            tot = np.zeros(n_types)
            for u in adj[v]:
                if dist.get(u) == dist[v] - 1:
                    t = type_of(bmap[(min(u, v), max(u, v))])
                    cnt += paths[u]
                    tot = tot + totals[u]
                    tot[t] += paths[u]
            paths[v] = cnt
            totals[v] = tot
            out[s, v] = tot / cnt
    return out
