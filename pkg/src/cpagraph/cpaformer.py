"""Structured sparse graph transformer with a cardinality-preserving channel.

Each head attends over the support set of a node.  Logits are a scaled dot
product plus three learned biases (distance bin, direct bond, key degree bin).
CPA-family variants add a query-gated, unnormalised sum of the same values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from enum import Enum

import numpy as np

from . import rng as rngmod
from . import tensorcore as tc
from .batcher import PaddedBatch
from .graphio import BOND_ORDERS, DEFAULT_SCHEMA, DEGREE_BINS, FeatureSchema
from .tensorcore import Tensor
from .topo import GRAPHORMER_SPD_CLIP

TEMPERATURE_FLOOR = 1e-3


class Variant(str, Enum):
    SOFTMAX_ONLY = "SOFTMAX_ONLY"
    CPA = "CPA"
    NORM_CPA = "NORM_CPA"
    GLOBAL_SUM_CPA = "GLOBAL_SUM_CPA"
    SCALAR_SIZE_BIAS = "SCALAR_SIZE_BIAS"
    LEARNED_SCALING = "LEARNED_SCALING"
    LEARNED_TEMPERATURE = "LEARNED_TEMPERATURE"
    SUM_MEAN = "SUM_MEAN"
    EXPLICIT_SIZE_INPUT = "EXPLICIT_SIZE_INPUT"


class GateKind(str, Enum):
    SIGMOID = "SIGMOID"
    LINEAR = "LINEAR"
    TANH = "TANH"


GATED = {Variant.CPA, Variant.NORM_CPA, Variant.GLOBAL_SUM_CPA}


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    model_dim: int = 32
    heads: int = 2
    ffn_dim: int = 64
    dropout: float = 0.0
    k: int | None = 3  # None means global attention within each component
    variant: Variant = Variant.CPA
    gate: GateKind = GateKind.SIGMOID
    seed: int = 0
    key_centrality: bool = True
    layer_centrality: bool = True
    path_edge_bias: bool = False
    spd_clip: int = GRAPHORMER_SPD_CLIP
    gate_init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "gate", GateKind(self.gate))
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1 or None (global)")
        if self.layers < 1 or self.ffn_dim < 1:
            raise ValueError("layers and ffn_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def spd_bins(self) -> int:
        return (self.k if self.k is not None else self.spd_clip) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["gate"] = self.gate.value
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = set(ModelConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return ModelConfig(**d)


def large_config(**overrides) -> ModelConfig:
    base = ModelConfig(layers=12, model_dim=512, heads=8, ffn_dim=2048, dropout=0.1, k=3)
    return replace(base, **overrides)


def faithful_graphormer_config(**overrides) -> ModelConfig:
    """Global attention, distance bins clipped at 20, shortest-path edge bias."""
    base = ModelConfig(k=None, variant=Variant.SOFTMAX_ONLY, path_edge_bias=True)
    return replace(base, **overrides)


# -- parameter layout --------------------------------------------------------------

def param_shapes(config: ModelConfig, schema: FeatureSchema = DEFAULT_SCHEMA) -> dict[str, tuple]:
    D, M, dh, F = config.model_dim, config.heads, config.head_dim, config.ffn_dim
    shapes: dict[str, tuple] = {}
    for name, size in schema.node_vocab:
        shapes[f"embed.{name}"] = (size, D)
    shapes["embed.mass"] = (D,)
    shapes["embed.bias"] = (D,)
    if config.variant is Variant.EXPLICIT_SIZE_INPUT:
        shapes["embed.size_proj.w"] = (D + 2, D)
        shapes["embed.size_proj.b"] = (D,)
    if config.layer_centrality:
        shapes["centrality"] = (DEGREE_BINS, D)
    for l in range(config.layers):
        p = f"L{l}."
        for w in ("q", "k", "v", "o"):
            shapes[p + "w" + w] = (D, D)
            shapes[p + "b" + w] = (D,)
        shapes[p + "spd"] = (config.spd_bins, M)
        if config.path_edge_bias:
            shapes[p + "path"] = (len(BOND_ORDERS), M)
        else:
            for name, size in schema.bond_vocab:
                shapes[p + f"bond.{name}"] = (size + 1, M)  # last row: [MASK]
        if config.key_centrality:
            shapes[p + "keycent"] = (DEGREE_BINS, M)
        for m in range(M):
            if config.variant in GATED:
                shapes[p + f"gate{m}"] = (dh, dh)
            if config.variant is Variant.LEARNED_TEMPERATURE:
                shapes[p + f"temp{m}.w"] = (dh + 2, 1)
                shapes[p + f"temp{m}.b"] = (1,)
            if config.variant is Variant.LEARNED_SCALING:
                shapes[p + f"scale{m}.w"] = (dh + 2, 1)
                shapes[p + f"scale{m}.b"] = (1,)
        if config.variant is Variant.SCALAR_SIZE_BIAS:
            shapes[p + "sizebias"] = (2, D)
        shapes[p + "ln1.g"] = (D,)
        shapes[p + "ln1.b"] = (D,)
        shapes[p + "ffn.w1"] = (D, F)
        shapes[p + "ffn.b1"] = (F,)
        shapes[p + "ffn.w2"] = (F, D)
        shapes[p + "ffn.b2"] = (D,)
        shapes[p + "ln2.g"] = (D,)
        shapes[p + "ln2.b"] = (D,)
    return shapes


def num_params(config: ModelConfig, schema: FeatureSchema = DEFAULT_SCHEMA) -> int:
    """Closed-form count of learnable scalars in the encoder."""
    D, M, dh, F, L = config.model_dim, config.heads, config.head_dim, config.ffn_dim, config.layers
    total = sum(s for _, s in schema.node_vocab) * D + 2 * D
    if config.variant is Variant.EXPLICIT_SIZE_INPUT:
        total += (D + 2) * D + D
    if config.layer_centrality:
        total += DEGREE_BINS * D
    per_layer = 4 * (D * D + D) + config.spd_bins * M
    per_layer += len(BOND_ORDERS) * M if config.path_edge_bias else sum(s + 1 for _, s in schema.bond_vocab) * M
    if config.key_centrality:
        per_layer += DEGREE_BINS * M
    if config.variant in GATED:
        per_layer += M * dh * dh
    if config.variant in (Variant.LEARNED_TEMPERATURE, Variant.LEARNED_SCALING):
        per_layer += M * (dh + 3)
    if config.variant is Variant.SCALAR_SIZE_BIAS:
        per_layer += 2 * D
    per_layer += 4 * D + D * F + F + F * D + D
    return total + L * per_layer


class CapacityError(ValueError):
    def __init__(self, message, best_ffn, best_count):
        super().__init__(message)
        self.best_ffn = best_ffn
        self.best_count = best_count


def match_capacity(base: ModelConfig, target: int, schema: FeatureSchema = DEFAULT_SCHEMA,
                   tolerance: int | None = None) -> int:
    """FFN width whose parameter count is closest to ``target`` (ties: smaller).

    The count is affine in ``ffn_dim`` with slope ``layers * (2 * model_dim + 1)``.
    With ``tolerance`` set, a best match further than that raises CapacityError.
    """
    slope = base.layers * (2 * base.model_dim + 1)
    fixed = num_params(replace(base, ffn_dim=1), schema) - slope
    exact = (target - fixed) / slope
    best = None
    for f in sorted({max(1, math.floor(exact)), max(1, math.ceil(exact))}):
        diff = abs(fixed + slope * f - target)
        if best is None or diff < best[1]:
            best = (f, diff)
    if tolerance is not None and best[1] > tolerance:
        raise CapacityError(f"closest count differs from target by {best[1]}", best[0], fixed + slope * best[0])
    return best[0]


def _xavier(gen: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-a, a, size=shape)


def init_params(config: ModelConfig, schema: FeatureSchema = DEFAULT_SCHEMA) -> dict[str, Tensor]:
    params = {}
    for name, shape in param_shapes(config, schema).items():
        gen = rngmod.stream(config.seed, "init", name)
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("embed.") and len(shape) == 2 and name != "embed.size_proj.w":
            data = _xavier(gen, shape)
        elif name == "centrality":
            data = _xavier(gen, shape)
        elif leaf in ("spd", "keycent", "path") or ".bond." in name:
            data = np.zeros(shape)  # bias tables start at zero
        elif leaf == "g":
            data = np.ones(shape)
        elif len(shape) == 2:
            data = _xavier(gen, shape)
            if leaf.startswith("gate"):
                data = data * config.gate_init_scale
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


# -- single-node reference operations ----------------------------------------------

def gate_fn(kind: GateKind, x: Tensor) -> Tensor:
    kind = GateKind(kind)
    if kind is GateKind.SIGMOID:
        return tc.sigmoid(x)
    if kind is GateKind.TANH:
        return tc.tanh(x)
    return x


def attention_logits(q: Tensor, keys: Tensor, spd_bins, spd_bias: Tensor, bond_bias=None,
                     key_degree_bins=None, key_bias: Tensor | None = None) -> Tensor:
    """Logits of one node over its support (one head).

    ``keys`` has shape (|S|, d_h); ``bond_bias`` is a per-position additive
    vector that is already zero away from direct bonds.
    """
    spd_bins = np.asarray(spd_bins, dtype=np.int64)
    if spd_bins.min() < 0 or spd_bins.max() >= spd_bias.shape[0]:
        raise IndexError("distance bin out of range")
    dh = q.shape[-1]
    out = tc.reshape(tc.matmul(keys, tc.reshape(q, (dh, 1))), (keys.shape[0],)) * (1.0 / math.sqrt(dh))
    out = out + tc.gather(spd_bias, spd_bins)
    if bond_bias is not None:
        out = out + bond_bias
    if key_bias is not None:
        out = out + tc.gather(key_bias, np.asarray(key_degree_bins, dtype=np.int64))
    return out


def cpa_head(q: Tensor, values: Tensor, logits: Tensor, gate_w: Tensor | None = None,
             variant: Variant = Variant.CPA, gate_kind: GateKind = GateKind.SIGMOID,
             graph_values: Tensor | None = None) -> Tensor:
    """Output of one head at one node.

    ``values`` are the support's value vectors (|S|, d_h).  ``graph_values``
    (all nodes of the graph) is only used by GLOBAL_SUM_CPA.
    """
    variant = Variant(variant)
    n = values.shape[0]
    if n == 0:
        raise ValueError("empty support")
    alpha = tc.masked_softmax(tc.reshape(logits, (1, n)), np.ones((1, n), dtype=bool))
    out = tc.reshape(tc.matmul(alpha, values), (values.shape[1],))
    if variant in GATED:
        if variant is Variant.GLOBAL_SUM_CPA:
            if graph_values is None:
                raise ValueError("GLOBAL_SUM_CPA needs graph_values")
            s = tc.sum(graph_values, axis=0)
        else:
            s = tc.sum(values, axis=0)
            if variant is Variant.NORM_CPA:
                s = s * (1.0 / n)
        dh = q.shape[-1]
        g = gate_fn(gate_kind, tc.reshape(tc.matmul(tc.reshape(q, (1, dh)), gate_w), (dh,)))
        out = out + g * s
    elif variant is Variant.SUM_MEAN:
        s = tc.sum(values, axis=0)
        out = out + (s + s * (1.0 / n)) * 0.5
    return out


# -- the encoder ---------------------------------------------------------------------

class CPAFormer:
    """Encoder holding its parameters by name."""

    def __init__(self, config: ModelConfig, schema: FeatureSchema = DEFAULT_SCHEMA,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.schema = schema
        self.params = params if params is not None else init_params(config, schema)
        expected = param_shapes(config, schema)
        if set(expected) != set(self.params):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    # ------------------------------------------------------------------
    def embed(self, batch: PaddedBatch, mask_nodes: np.ndarray | None = None,
              mask_token: Tensor | None = None) -> Tensor:
        P = self.params
        h = None
        for f, (name, _) in enumerate(self.schema.node_vocab):
            e = tc.gather(P[f"embed.{name}"], batch.categorical[:, f])
            h = e if h is None else h + e
        mass = tc.reshape(tc.matmul(Tensor(batch.continuous), tc.reshape(P["embed.mass"], (1, -1))),
                          (batch.n_nodes, self.config.model_dim))
        h = h + mass + P["embed.bias"]
        if mask_nodes is not None and np.any(mask_nodes):
            if mask_token is None:
                raise ValueError("masked nodes need a mask token")
            keep = np.repeat((~mask_nodes).astype(np.float64)[:, None], self.config.model_dim, axis=1)
            tok = tc.gather(tc.reshape(mask_token, (1, -1)), np.zeros(batch.n_nodes, dtype=np.int64))
            h = h * keep + tok * (1.0 - keep)
        if self.config.variant is Variant.EXPLICIT_SIZE_INPUT:
            sizes = np.stack([batch.graph_size, batch.support_size], axis=1).astype(np.float64)
            h = tc.concat([h, Tensor(sizes)], axis=1) @ P["embed.size_proj.w"] + P["embed.size_proj.b"]
        return h

    def _pair_bias(self, l: int, batch: PaddedBatch, masked_edges: np.ndarray | None) -> Tensor:
        """Additive logit bias of shape (T, L, M) for layer ``l``."""
        P, cfg = self.params, self.config
        p = f"L{l}."
        bias = tc.gather(P[p + "spd"], batch.spd_bin)
        if cfg.path_edge_bias:
            if batch.path_counts is None:
                raise ValueError("path edge bias needs a batch built with path counts")
            T, L, nt = batch.path_counts.shape
            flat = tc.matmul(Tensor(batch.path_counts.reshape(T * L, nt)), P[p + "path"])
            bias = bias + tc.reshape(flat, (T, L, cfg.heads))
        else:
            is_bond = (batch.pair_edge >= 0)
            idx = batch.bond_idx.copy()
            if masked_edges is not None and len(masked_edges):
                hit = np.isin(batch.pair_edge, masked_edges) & is_bond
                for f, (_, size) in enumerate(self.schema.bond_vocab):
                    idx[..., f][hit] = size
            w = np.repeat(is_bond.astype(np.float64)[..., None], cfg.heads, axis=2)
            bond = None
            for f, (name, _) in enumerate(self.schema.bond_vocab):
                e = tc.gather(P[p + f"bond.{name}"], idx[..., f])
                bond = e if bond is None else bond + e
            bias = bias + bond * w
        if cfg.key_centrality:
            bias = bias + tc.gather(P[p + "keycent"], batch.degree_bins[batch.nbr])
        return bias

    def _size_inputs(self, batch: PaddedBatch) -> np.ndarray:
        return np.stack([np.log1p(batch.support_size), np.log1p(batch.graph_size)], axis=1).astype(np.float64)

    def attention(self, l: int, h: Tensor, batch: PaddedBatch, masked_edges=None, probe=None) -> Tensor:
        """Multi-head support attention; returns u_i before centrality injection."""
        P, cfg = self.params, self.config
        p = f"L{l}."
        dh, M = cfg.head_dim, cfg.heads
        Q = h @ P[p + "wq"] + P[p + "bq"]
        K = h @ P[p + "wk"] + P[p + "bk"]
        V = h @ P[p + "wv"] + P[p + "bv"]
        bias = self._pair_bias(l, batch, masked_edges)
        valid = batch.valid
        vfloat = valid.astype(np.float64)
        size_in = self._size_inputs(batch) if cfg.variant in (Variant.LEARNED_TEMPERATURE, Variant.LEARNED_SCALING) else None
        heads = []
        for m in range(M):
            cols = slice(m * dh, (m + 1) * dh)
            q, k_, v = Q[:, cols], K[:, cols], V[:, cols]
            kg, vg = tc.gather(k_, batch.nbr), tc.gather(v, batch.nbr)
            a = tc.rowdot(q, kg) * (1.0 / math.sqrt(dh)) + bias[:, :, m]
            if cfg.variant is Variant.LEARNED_TEMPERATURE:
                z = tc.concat([q, Tensor(size_in)], axis=1) @ P[p + f"temp{m}.w"] + P[p + f"temp{m}.b"]
                tau = tc.clamp_min(tc.softplus(tc.reshape(z, (batch.n_nodes,))), TEMPERATURE_FLOOR)
                a = tc.scale_rows(a, tc.reciprocal(tau))
            alpha = tc.masked_softmax(a, valid)
            o = tc.weighted_sum(alpha, vg)
            if cfg.variant in GATED:
                if cfg.variant is Variant.GLOBAL_SUM_CPA:
                    s = tc.gather(tc.segment_sum(v, batch.node_graph, batch.n_graphs), batch.node_graph)
                elif cfg.variant is Variant.NORM_CPA:
                    s = tc.weighted_sum(Tensor(vfloat / batch.support_size[:, None]), vg)
                else:
                    s = tc.weighted_sum(Tensor(vfloat), vg)
                g = gate_fn(cfg.gate, q @ P[p + f"gate{m}"])
                gs = g * s
                if probe is not None:
                    probe.append(np.sqrt((gs.data ** 2).sum(axis=1)))
                o = o + gs
            elif cfg.variant is Variant.SUM_MEAN:
                s = tc.weighted_sum(Tensor(vfloat), vg)
                mean = tc.weighted_sum(Tensor(vfloat / batch.support_size[:, None]), vg)
                o = o + (s + mean) * 0.5
            elif cfg.variant is Variant.LEARNED_SCALING:
                z = tc.concat([q, Tensor(size_in)], axis=1) @ P[p + f"scale{m}.w"] + P[p + f"scale{m}.b"]
                o = tc.scale_rows(o, tc.sigmoid(tc.reshape(z, (batch.n_nodes,))))
            heads.append(o)
        u = tc.concat(heads, axis=1) @ P[p + "wo"] + P[p + "bo"]
        if cfg.variant is Variant.SCALAR_SIZE_BIAS:
            raw = np.stack([batch.graph_size, batch.support_size], axis=1).astype(np.float64)
            u = u + Tensor(raw) @ P[p + "sizebias"]
        return u

    def inject_centrality(self, u: Tensor, batch: PaddedBatch) -> Tensor:
        if not self.config.layer_centrality:
            return u
        return u + tc.gather(self.params["centrality"], batch.degree_bins)

    def layer(self, l: int, h: Tensor, batch: PaddedBatch, training: bool = False,
              dropout_rng: np.random.Generator | None = None, masked_edges=None, probe=None) -> Tensor:
        P, cfg = self.params, self.config
        p = f"L{l}."
        u = self.inject_centrality(self.attention(l, h, batch, masked_edges, probe), batch)
        h = tc.layer_norm(h + tc.dropout(u, cfg.dropout, dropout_rng, training)) * P[p + "ln1.g"] + P[p + "ln1.b"]
        f = tc.relu(h @ P[p + "ffn.w1"] + P[p + "ffn.b1"]) @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
        return tc.layer_norm(h + tc.dropout(f, cfg.dropout, dropout_rng, training)) * P[p + "ln2.g"] + P[p + "ln2.b"]

    def encode(self, batch: PaddedBatch, training: bool = False, dropout_rng=None,
               mask_nodes=None, mask_token=None, masked_edges=None, probe=None) -> Tensor:
        if batch.spd_bins != self.config.spd_bins:
            raise ValueError(f"batch has {batch.spd_bins} distance bins, model expects {self.config.spd_bins}")
        h = self.embed(batch, mask_nodes, mask_token)
        for l in range(self.config.layers):
            h = self.layer(l, h, batch, training, dropout_rng, masked_edges, probe)
        return h

    def readout(self, h: Tensor, batch: PaddedBatch) -> Tensor:
        return tc.mean_pool(h, batch.node_graph, batch.n_graphs)

    def forward(self, batch: PaddedBatch, **kw) -> Tensor:
        """Graph embeddings (G, D)."""
        return self.readout(self.encode(batch, **kw), batch)


def cpa_channel_norm_probe(model: CPAFormer, batch: PaddedBatch):
    """Per-node norm of the gated unnormalised sum, averaged over heads and layers.

    Returns ``(norms, support_sizes, degrees)``; norms are zero for variants
    without a gated channel.
    """
    probe: list[np.ndarray] = []
    model.encode(batch, probe=probe)
    if probe:
        norms = np.mean(np.stack(probe, axis=0), axis=0)
    else:
        norms = np.zeros(batch.n_nodes)
    return norms, batch.support_size.astype(np.float64), batch.degree_bins.astype(np.float64)
