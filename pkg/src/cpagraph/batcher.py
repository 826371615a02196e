"""Bucketing, neighbour-list padding and the padding audit.

A :class:`PaddedBatch` is the model's only input format: nodes of all graphs
are stacked, and each node carries its support list padded to the batch
maximum ``Lmax`` together with a validity mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphio import (BOND_ORDERS, DEFAULT_SCHEMA, CorpusStats, FeatureSchema, MolGraph,
                      featurize)
from .topo import (GRAPHORMER_SPD_CLIP, SupportSets, degree_bins, shortest_path_edge_counts,
                   truncated_spd)


@dataclass
class GraphInput:
    """A graph plus the topology artifacts the encoder consumes."""

    graph: MolGraph
    supports: SupportSets
    degree_bins: np.ndarray
    path_counts: np.ndarray | None = None


def prepare(g: MolGraph, k: int | None, with_paths: bool = False) -> GraphInput:
    sup = truncated_spd(g, k)
    paths = None
    if with_paths:
        paths = shortest_path_edge_counts(g, len(BOND_ORDERS), lambda b: BOND_ORDERS.index(b.order))
    return GraphInput(g, sup, degree_bins(g), paths)


@dataclass
class PaddedBatch:
    ids: list[str]
    n_graphs: int
    node_graph: np.ndarray      # (T,) graph index of each node
    offsets: np.ndarray         # (G+1,) node offsets
    categorical: np.ndarray     # (T, F) int
    continuous: np.ndarray      # (T, 1)
    degree_bins: np.ndarray     # (T,)
    nbr: np.ndarray             # (T, L) global node index, padded with self
    valid: np.ndarray           # (T, L) bool
    spd_bin: np.ndarray         # (T, L) int
    bond_idx: np.ndarray        # (T, L, n_bond_fields) int
    pair_edge: np.ndarray       # (T, L) global edge id or -1
    path_counts: np.ndarray | None  # (T, L, n_orders)
    support_size: np.ndarray    # (T,)
    graph_size: np.ndarray      # (T,)
    edges: np.ndarray           # (E, 2) global endpoints
    edge_features: np.ndarray   # (E, n_bond_fields)
    edge_graph: np.ndarray      # (E,)
    bucket: int = 0
    spd_bins: int = 0

    @property
    def n_nodes(self) -> int:
        return int(self.node_graph.shape[0])

    @property
    def lmax(self) -> int:
        return int(self.nbr.shape[1])


@dataclass
class _Block:
    """One graph's padded arrays with graph-local indices."""

    categorical: np.ndarray
    continuous: np.ndarray
    nbr: np.ndarray
    valid: np.ndarray
    spd_bin: np.ndarray
    bond_idx: np.ndarray
    pair_edge: np.ndarray
    paths: np.ndarray | None
    edges: np.ndarray
    edge_features: np.ndarray


def _local_block(gi: GraphInput, schema: FeatureSchema, stats: CorpusStats | None, kb: int,
                 with_paths: bool) -> _Block:
    key = (id(schema), None if stats is None else (tuple(sorted(stats.mean.items())),
                                                   tuple(sorted(stats.std.items()))), kb, with_paths)
    cache = gi.__dict__.setdefault("_blocks", {})
    if key in cache:
        return cache[key]
    g = gi.graph
    nf, bfeat = featurize(g, schema, stats, gi.degree_bins)
    nbf = len(schema.bond_vocab)
    sizes = gi.supports.sizes()
    lmax = int(sizes.max())
    nbr = np.repeat(np.arange(g.n, dtype=np.int64)[:, None], lmax, axis=1)
    valid = np.zeros((g.n, lmax), dtype=bool)
    sbin = np.zeros((g.n, lmax), dtype=np.int64)
    bidx = np.zeros((g.n, lmax, nbf), dtype=np.int64)
    pair_edge = np.full((g.n, lmax), -1, dtype=np.int64)
    paths = np.zeros((g.n, lmax, len(BOND_ORDERS))) if with_paths else None
    eid = np.full((g.n, g.n), -1, dtype=np.int64)
    for e, b in enumerate(g.bonds):
        eid[b.u, b.v] = eid[b.v, b.u] = e
    efeat = np.array([bfeat[b.endpoints] for b in g.bonds], dtype=np.int64).reshape(-1, nbf)
    for i in range(g.n):
        js, ds = gi.supports.neighbors[i], gi.supports.spd[i]
        m = len(js)
        nbr[i, :m] = js
        valid[i, :m] = True
        sbin[i, :m] = np.minimum(ds, kb)
        ids = np.where(ds == 1, eid[i, js], -1)
        direct = ids >= 0
        pair_edge[i, :m] = ids
        bidx[i, :m][direct] = efeat[ids[direct]]
        if paths is not None:
            paths[i, :m] = gi.path_counts[i, js]
    edges = np.array([b.endpoints for b in g.bonds], dtype=np.int64).reshape(-1, 2)
    block = _Block(nf.categorical, nf.continuous, nbr, valid, sbin, bidx, pair_edge, paths, edges, efeat)
    cache[key] = block
    return block


def pad_batch(inputs: list[GraphInput], k: int | None, schema: FeatureSchema = DEFAULT_SCHEMA,
              stats: CorpusStats | None = None, bucket: int = 0,
              spd_clip: int = GRAPHORMER_SPD_CLIP) -> PaddedBatch:
    """Stack graphs and pad every node's support list to the batch maximum.

    Per-graph arrays are cached on each :class:`GraphInput`, so repeated
    batching of the same graphs only pays for the concatenation.
    """
    if not inputs:
        raise ValueError("pad_batch needs at least one graph")
    kb = k if k is not None else spd_clip
    with_paths = all(gi.path_counts is not None for gi in inputs)
    blocks = [_local_block(gi, schema, stats, kb, with_paths) for gi in inputs]
    sizes = [gi.graph.n for gi in inputs]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    ecounts = [b.edges.shape[0] for b in blocks]
    eoffsets = np.concatenate([[0], np.cumsum(ecounts)]).astype(np.int64)
    total = int(offsets[-1])
    lmax = max(b.nbr.shape[1] for b in blocks)
    nbf = len(schema.bond_vocab)

    nbr = np.repeat(np.arange(total, dtype=np.int64)[:, None], lmax, axis=1)
    valid = np.zeros((total, lmax), dtype=bool)
    sbin = np.zeros((total, lmax), dtype=np.int64)
    bidx = np.zeros((total, lmax, nbf), dtype=np.int64)
    pair_edge = np.full((total, lmax), -1, dtype=np.int64)
    paths = np.zeros((total, lmax, len(BOND_ORDERS))) if with_paths else None
    for gidx, b in enumerate(blocks):
        lo, hi = offsets[gidx], offsets[gidx + 1]
        w = b.nbr.shape[1]
        nbr[lo:hi, :w] = b.nbr + lo
        valid[lo:hi, :w] = b.valid
        sbin[lo:hi, :w] = b.spd_bin
        bidx[lo:hi, :w] = b.bond_idx
        pair_edge[lo:hi, :w] = np.where(b.pair_edge >= 0, b.pair_edge + eoffsets[gidx], -1)
        if paths is not None:
            paths[lo:hi, :w] = b.paths
    # padded slots point at the node itself
    nbr = np.where(valid, nbr, np.arange(total, dtype=np.int64)[:, None])

    return PaddedBatch(
        ids=[gi.graph.id for gi in inputs], n_graphs=len(inputs),
        node_graph=np.repeat(np.arange(len(inputs), dtype=np.int64), sizes),
        offsets=offsets,
        categorical=np.concatenate([b.categorical for b in blocks]),
        continuous=np.concatenate([b.continuous for b in blocks]),
        degree_bins=np.concatenate([gi.degree_bins for gi in inputs]).astype(np.int64),
        nbr=nbr, valid=valid, spd_bin=sbin, bond_idx=bidx, pair_edge=pair_edge, path_counts=paths,
        support_size=np.concatenate([gi.supports.sizes() for gi in inputs]),
        graph_size=np.repeat(np.array(sizes, dtype=np.int64), sizes),
        edges=np.concatenate([b.edges + offsets[gidx] for gidx, b in enumerate(blocks)]).reshape(-1, 2),
        edge_features=np.concatenate([b.edge_features for b in blocks]).reshape(-1, nbf),
        edge_graph=np.repeat(np.arange(len(inputs), dtype=np.int64), ecounts),
        bucket=bucket, spd_bins=kb + 1,
    )


# -- bucketing -------------------------------------------------------------------

def bucket_key(gi: GraphInput, key: str) -> int:
    if key == "n":
        return gi.graph.n
    if key == "support":
        return int(gi.supports.sizes().max())
    raise ValueError(f"unknown bucket key {key!r}")


def bucket(items, width: int, key=None) -> dict[int, list[int]]:
    """Group positions of ``items`` by ``ceil(key / width)``; input order kept.

    ``key`` maps an item to its integer key; by default items are keys already.
    """
    if width < 1:
        raise ValueError("bucket width must be >= 1")
    out: dict[int, list[int]] = {}
    for pos, item in enumerate(items):
        kval = int(item if key is None else key(item))
        out.setdefault(math.ceil(kval / width), []).append(pos)
    return dict(sorted(out.items()))


def make_batches(inputs: list[GraphInput], k: int | None, width: int, key: str = "support",
                 cap: int = 32, schema: FeatureSchema = DEFAULT_SCHEMA,
                 stats: CorpusStats | None = None) -> list[PaddedBatch]:
    buckets = bucket(inputs, width, key=lambda gi: bucket_key(gi, key))
    batches = []
    for bid, members in buckets.items():
        for start in range(0, len(members), cap):
            chunk = [inputs[p] for p in members[start:start + cap]]
            batches.append(pad_batch(chunk, k, schema, stats, bucket=bid))
    return batches


# -- padding audit ---------------------------------------------------------------

@dataclass
class PaddingAudit:
    mean_padded_length: float
    max_padded_length: int
    padding_percent: float
    bucket_width: int
    batches: int = 0
    per_batch: list[float] = field(default_factory=list)


def batch_padding(lengths) -> tuple[int, float]:
    """Padded length and (padded - actual) / padded for one batch of lengths."""
    lengths = np.asarray(lengths, dtype=np.int64)
    lmax = int(lengths.max())
    padded = lmax * lengths.size
    return lmax, (padded - int(lengths.sum())) / padded


def audit(length_batches, width: int) -> PaddingAudit:
    """Aggregate padding over batches given as per-node list lengths."""
    padded_lengths, fractions = [], []
    for lengths in length_batches:
        lmax, frac = batch_padding(lengths)
        padded_lengths.append(lmax)
        fractions.append(frac * 100.0)
    if not fractions:
        return PaddingAudit(0.0, 0, 0.0, width)
    return PaddingAudit(float(np.mean(padded_lengths)), int(max(padded_lengths)),
                        float(np.mean(fractions)), width, len(fractions), fractions)


def audit_corpus(inputs: list[GraphInput], width: int, key: str = "support", cap: int = 32,
                 k: int | None = 3) -> PaddingAudit:
    """Padding audit of bucketed batches.

    With ``k`` set, each node's list is its support; with ``k=None`` (global)
    every node list has length N and lists are padded to the bucket's max N.
    """
    buckets = bucket(inputs, width, key=lambda gi: bucket_key(gi, key))
    length_batches = []
    for members in buckets.values():
        for start in range(0, len(members), cap):
            chunk = [inputs[p] for p in members[start:start + cap]]
            if k is None:
                lens = np.concatenate([np.full(gi.graph.n, gi.graph.n) for gi in chunk])
            else:
                lens = np.concatenate([gi.supports.sizes() for gi in chunk])
            length_batches.append(lens)
    return audit(length_batches, width)
