"""Self-supervised pretraining: views, masking, NT-Xent and the training loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import rng as rngmod
from . import tensorcore as tc
from .batcher import GraphInput, PaddedBatch, pad_batch, prepare
from .cpaformer import CPAFormer, _xavier
from .graphio import (BOND_ORDER_VALUE, DEFAULT_SCHEMA, MAX_H, AtomRecord, BondRecord, CorpusStats,
                      FeatureSchema, MolGraph, compute_corpus_stats, perceive, valence_ok)
from .tensorcore import NumericError, Tensor
from .topo import INF, SupportSets, degree_bins, truncated_spd

log = logging.getLogger(__name__)

CONTRAST_WEIGHT = 0.5
NTXENT_TAU = 0.2
MASK_RATE = 0.15
MAX_RETRIES = 5


class SpdMode(str, Enum):
    PER_VIEW = "PER_VIEW"
    STABLE = "STABLE"


class ChemAware(str, Enum):
    NONE = "NONE"
    ATTRIBUTE_MASK = "ATTRIBUTE_MASK"
    VALENCY_CONSTRAINED = "VALENCY_CONSTRAINED"


@dataclass(frozen=True)
class AugConfig:
    subgraph_keep: tuple[float, float] = (0.50, 0.75)
    node_drop: tuple[float, float] = (0.1, 0.3)
    edge_drop: tuple[float, float] = (0.1, 0.3)
    spd_mode: SpdMode = SpdMode.PER_VIEW
    chem_aware: ChemAware = ChemAware.NONE
    stream: str = "views"

    def __post_init__(self):
        object.__setattr__(self, "spd_mode", SpdMode(self.spd_mode))
        object.__setattr__(self, "chem_aware", ChemAware(self.chem_aware))
        for lo, hi in (self.subgraph_keep, self.node_drop, self.edge_drop):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError("augmentation ranges must lie within [0, 1]")
        if self.subgraph_keep[0] <= 0.0:
            raise ValueError("minimum keep fraction must be positive")

    @staticmethod
    def identity() -> "AugConfig":
        return AugConfig(subgraph_keep=(1.0, 1.0), node_drop=(0.0, 0.0), edge_drop=(0.0, 0.0))


@dataclass
class View:
    graph: MolGraph
    supports: SupportSets
    degree_bins: np.ndarray
    provenance: np.ndarray  # view node -> original node
    identity: bool = False
    attribute_mask: np.ndarray | None = None

    def as_input(self) -> GraphInput:
        return GraphInput(self.graph, self.supports, self.degree_bins)


# -- augmentations -----------------------------------------------------------------

def _sample_view(g: MolGraph, cfg: AugConfig, gen: np.random.Generator):
    n = g.n
    keep_frac = gen.uniform(*cfg.subgraph_keep)
    n_keep = max(1, int(round(keep_frac * n)))
    nodes = np.sort(gen.choice(n, size=n_keep, replace=False))
    rate = gen.uniform(*cfg.node_drop)
    nodes = nodes[gen.random(nodes.size) >= rate]
    if nodes.size == 0:
        return None
    sub, prov = g.subgraph(nodes)
    erate = gen.uniform(*cfg.edge_drop)
    if cfg.chem_aware is ChemAware.VALENCY_CONSTRAINED:
        sub, _ = valency_constrained_edge_dropout(sub, erate, gen)
    else:
        keep_edges = gen.random(len(sub.bonds)) >= erate
        sub = MolGraph(sub.id, sub.atoms, [b for b, kp in zip(sub.bonds, keep_edges) if kp])
    return sub, prov


def _view_topology(original: MolGraph, sub: MolGraph, prov: np.ndarray, k: int | None,
                   mode: SpdMode, orig_supports: SupportSets | None):
    if mode is SpdMode.PER_VIEW:
        return truncated_spd(sub, k), degree_bins(sub)
    if orig_supports is None:
        orig_supports = truncated_spd(original, k)
    position = {int(o): i for i, o in enumerate(prov)}
    nbrs, spds = [], []
    for o in prov:
        js, ds = orig_supports.neighbors[int(o)], orig_supports.spd[int(o)]
        keep = [(position[int(j)], int(d)) for j, d in zip(js, ds) if int(j) in position]
        keep.sort(key=lambda jd: (jd[1], jd[0]))
        nbrs.append(np.array([j for j, _ in keep], dtype=np.int64))
        spds.append(np.array([d for _, d in keep], dtype=np.int64))
    return SupportSets(nbrs, spds, k), degree_bins(original)[prov]


def make_view(g: MolGraph, cfg: AugConfig, k: int | None, gen: np.random.Generator,
              orig_supports: SupportSets | None = None) -> View:
    if g.n < 2:
        sup = truncated_spd(g, k)
        return View(g, sup, degree_bins(g), np.arange(g.n), identity=True)
    for _ in range(MAX_RETRIES):
        sampled = _sample_view(g, cfg, gen)
        if sampled is not None:
            sub, prov = sampled
            sup, dbins = _view_topology(g, sub, prov, k, cfg.spd_mode, orig_supports)
            view = View(sub, sup, dbins, prov)
            if cfg.chem_aware is ChemAware.ATTRIBUTE_MASK:
                view.attribute_mask = make_mask_plan(sub.n, 0, gen).nodes
            return view
    log.warning("all nodes dropped %d times for graph %s; using identity view", MAX_RETRIES, g.id)
    return View(g, truncated_spd(g, k), degree_bins(g), np.arange(g.n), identity=True)


def make_views(g: MolGraph, cfg: AugConfig, k: int | None = 3, seed: int = 0, *keys) -> tuple[View, View]:
    """Two augmented views; identical ``(seed, graph id, keys)`` give identical views."""
    orig = truncated_spd(g, k) if cfg.spd_mode is SpdMode.STABLE else None
    v1 = make_view(g, cfg, k, rngmod.stream(seed, cfg.stream, g.id, *keys, 0), orig)
    v2 = make_view(g, cfg, k, rngmod.stream(seed, cfg.stream, g.id, *keys, 1), orig)
    return v1, v2


def _total_valence_ok(atom: AtomRecord, orders: list[str], num_h: int) -> bool:
    if num_h > MAX_H:
        return False
    return valence_ok(atom.element, atom.aromatic, orders, num_h, atom.formal_charge)


def _try_drop(g: MolGraph, bond: BondRecord) -> MolGraph | None:
    freed = BOND_ORDER_VALUE[bond.order]
    atoms = list(g.atoms)
    for end in bond.endpoints:
        a = atoms[end]
        if a.num_h + freed > MAX_H:
            return None
        atoms[end] = AtomRecord(a.element, a.formal_charge, a.num_h + freed, a.aromatic, a.in_ring, a.mass)
    remaining = [b for b in g.bonds if b.endpoints != bond.endpoints]
    new = perceive(atoms, remaining, g.id)
    orders_at: list[list[str]] = [[] for _ in new.atoms]
    for b in new.bonds:
        orders_at[b.u].append(b.order)
        orders_at[b.v].append(b.order)
    for i, (old, a) in enumerate(zip(g.atoms, new.atoms)):
        touched = i in bond.endpoints or old.aromatic != a.aromatic
        if touched and not _total_valence_ok(a, orders_at[i], a.num_h):
            return None
    return new


@dataclass
class DropReport:
    attempted: int = 0
    succeeded: int = 0
    skipped: int = 0

    @property
    def success_rate(self) -> float:
        return self.succeeded / self.attempted if self.attempted else 1.0


def valency_constrained_edge_dropout(g: MolGraph, rate: float, gen: np.random.Generator):
    """Drop about ``rate`` of the bonds, keeping every atom at a valid valence.

    A dropped bond's order is returned to its endpoints as hydrogens, ring and
    aromatic flags are re-perceived, and the drop is rejected when any affected
    atom no longer has a table valence.  Each drop retries up to five random
    candidates before it is skipped.
    """
    report = DropReport()
    n_drop = int(math.floor(rate * len(g.bonds) + 0.5)) if rate > 0 else 0
    for _ in range(n_drop):
        if not g.bonds:
            break
        report.attempted += 1
        done = False
        for _ in range(MAX_RETRIES):
            cand = g.bonds[int(gen.integers(len(g.bonds)))]
            new = _try_drop(g, cand)
            if new is not None:
                g = new
                done = True
                break
        if done:
            report.succeeded += 1
        else:
            report.skipped += 1
    if report.skipped:
        log.debug("valency-constrained dropout skipped %d of %d drops", report.skipped, report.attempted)
    return g, report


# -- masked modelling --------------------------------------------------------------

@dataclass
class MaskPlan:
    nodes: np.ndarray  # bool (N,)
    edges: np.ndarray  # int ids of masked edges

    @property
    def empty(self) -> bool:
        return not self.nodes.any() and self.edges.size == 0


def mask_count(count: int, rate: float = MASK_RATE) -> int:
    if count <= 0:
        return 0
    return max(1, int(math.floor(rate * count)))


def make_mask_plan(n_nodes: int, n_edges: int, gen: np.random.Generator, rate: float = MASK_RATE) -> MaskPlan:
    nodes = np.zeros(n_nodes, dtype=bool)
    nodes[gen.choice(n_nodes, size=mask_count(n_nodes, rate), replace=False)] = True
    edges = np.sort(gen.choice(n_edges, size=mask_count(n_edges, rate), replace=False)) if n_edges else np.zeros(0, np.int64)
    return MaskPlan(nodes, edges.astype(np.int64))


def batch_mask_plan(batch: PaddedBatch, gen: np.random.Generator, rate: float = MASK_RATE) -> MaskPlan:
    """Independent node/edge draws per graph, expressed in batch-global ids."""
    nodes = np.zeros(batch.n_nodes, dtype=bool)
    edges = []
    for gidx in range(batch.n_graphs):
        lo, hi = batch.offsets[gidx], batch.offsets[gidx + 1]
        eids = np.nonzero(batch.edge_graph == gidx)[0]
        plan = make_mask_plan(int(hi - lo), eids.size, gen, rate)
        nodes[lo:hi] = plan.nodes
        edges.extend(eids[plan.edges].tolist())
    return MaskPlan(nodes, np.array(sorted(edges), dtype=np.int64))


def apply_mask(embeddings: Tensor, plan: MaskPlan, mask_token: Tensor) -> Tensor:
    """Replace whole embedding rows of masked nodes by the learned mask vector."""
    n, d = embeddings.shape
    keep = np.repeat((~plan.nodes).astype(np.float64)[:, None], d, axis=1)
    tok = tc.gather(tc.reshape(mask_token, (1, d)), np.zeros(n, dtype=np.int64))
    return embeddings * keep + tok * (1.0 - keep)


def _ce_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row cross-entropy, shape (rows,)."""
    lp = tc.log_softmax(logits)
    return -tc.index(lp, (np.arange(targets.size), targets))


def masked_loss(node_out: dict, edge_out: dict, node_targets: dict, edge_targets: dict,
                plan: MaskPlan) -> Tensor:
    """Mean over masked items of the per-field CE (categorical) plus MSE (continuous).

    ``node_out``/``edge_out`` map field names to predictions for every node or
    edge; targets map the same names to original values.
    """
    terms = []
    rows = np.nonzero(plan.nodes)[0]
    if rows.size:
        for name, pred in node_out.items():
            tgt = node_targets[name]
            if name == "mass":
                diff = tc.index(pred, rows) - Tensor(tgt[rows])
                terms.append(tc.sum(diff * diff))
            else:
                terms.append(tc.sum(_ce_rows(tc.index(pred, rows), tgt[rows])))
    eids = plan.edges
    if eids.size:
        for name, pred in edge_out.items():
            terms.append(tc.sum(_ce_rows(tc.index(pred, eids), edge_targets[name][eids])))
    n_items = int(rows.size + eids.size)
    if n_items == 0:
        log.warning("empty mask plan; masked loss is 0")
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / n_items)


# -- contrastive ------------------------------------------------------------------

def ntxent(z1: Tensor, z2: Tensor, tau: float = NTXENT_TAU) -> Tensor:
    """Symmetrised NT-Xent with in-batch negatives on L2-normalised rows."""
    if z1.shape != z2.shape:
        raise ValueError("view batches must have equal shapes")
    B = z1.shape[0]
    if B < 2:
        raise ValueError("NT-Xent needs a batch of at least 2 (no negatives otherwise)")
    z = tc.normalize_rows(tc.concat([z1, z2], axis=0))
    sim = (z @ z.T) * (1.0 / tau)
    n = 2 * B
    cols = np.array([[c for c in range(n) if c != r] for r in range(n)], dtype=np.int64)
    rows = np.repeat(np.arange(n)[:, None], n - 1, axis=1)
    logits = tc.index(sim, (rows, cols))
    partner = (np.arange(n) + B) % n
    pos = np.array([int(np.nonzero(cols[r] == partner[r])[0][0]) for r in range(n)])
    lp = tc.log_softmax(logits)
    return -tc.mean(tc.index(lp, (np.arange(n), pos)))


def total_loss(mask_loss, contrast_loss):
    """mask + 0.5 * contrast."""
    return mask_loss + contrast_loss * CONTRAST_WEIGHT


# -- heads -------------------------------------------------------------------------

class PretrainHeads:
    """Mask token, feature decoders and the contrastive projection."""

    def __init__(self, model_dim: int, schema: FeatureSchema = DEFAULT_SCHEMA, hidden: int = 64,
                 proj_dim: int = 32, seed: int = 0):
        self.schema = schema
        shapes = {"mask_token": (model_dim,), "dec.w1": (model_dim, hidden), "dec.b1": (hidden,),
                  "edec.w1": (2 * model_dim, hidden), "edec.b1": (hidden,),
                  "proj.w1": (model_dim, model_dim), "proj.b1": (model_dim,),
                  "proj.w2": (model_dim, proj_dim), "proj.b2": (proj_dim,),
                  "dec.mass.w": (hidden, 1), "dec.mass.b": (1,)}
        for name, size in schema.node_vocab:
            shapes[f"dec.{name}.w"] = (hidden, size)
            shapes[f"dec.{name}.b"] = (size,)
        for name, size in schema.bond_vocab:
            shapes[f"edec.{name}.w"] = (hidden, size)
            shapes[f"edec.{name}.b"] = (size,)
        self.params = {}
        for name, shape in shapes.items():
            gen = rngmod.stream(seed, "heads", name)
            if name == "mask_token":
                data = gen.normal(0.0, 0.02, size=shape)
            elif len(shape) == 2:
                data = _xavier(gen, shape)
            else:
                data = np.zeros(shape)
            self.params[name] = Tensor(data, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def decode_nodes(self, h: Tensor) -> dict:
        P = self.params
        hid = tc.relu(h @ P["dec.w1"] + P["dec.b1"])
        out = {name: hid @ P[f"dec.{name}.w"] + P[f"dec.{name}.b"] for name, _ in self.schema.node_vocab}
        out["mass"] = tc.reshape(hid @ P["dec.mass.w"] + P["dec.mass.b"], (h.shape[0],))
        return out

    def decode_edges(self, h: Tensor, edges: np.ndarray) -> dict:
        if edges.shape[0] == 0:
            return {}
        P = self.params
        pair = tc.concat([tc.gather(h, edges[:, 0]), tc.gather(h, edges[:, 1])], axis=1)
        hid = tc.relu(pair @ P["edec.w1"] + P["edec.b1"])
        return {name: hid @ P[f"edec.{name}.w"] + P[f"edec.{name}.b"] for name, _ in self.schema.bond_vocab}

    def project(self, g: Tensor) -> Tensor:
        P = self.params
        return tc.relu(g @ P["proj.w1"] + P["proj.b1"]) @ P["proj.w2"] + P["proj.b2"]


def feature_targets(batch: PaddedBatch, schema: FeatureSchema = DEFAULT_SCHEMA):
    node = {name: batch.categorical[:, f] for f, (name, _) in enumerate(schema.node_vocab)}
    node["mass"] = batch.continuous[:, 0]
    edge = {name: batch.edge_features[:, f] for f, (name, _) in enumerate(schema.bond_vocab)}
    return node, edge


def mask_objective(model: CPAFormer, heads: PretrainHeads, batch: PaddedBatch, plan: MaskPlan,
                   training: bool = False, dropout_rng=None) -> Tensor:
    h = model.encode(batch, training=training, dropout_rng=dropout_rng, mask_nodes=plan.nodes,
                     mask_token=heads.params["mask_token"], masked_edges=plan.edges)
    node_t, edge_t = feature_targets(batch, model.schema)
    return masked_loss(heads.decode_nodes(h), heads.decode_edges(h, batch.edges), node_t, edge_t, plan)


def contrast_objective(model: CPAFormer, heads: PretrainHeads, views: PaddedBatch,
                       training: bool = False, dropout_rng=None, tau: float = NTXENT_TAU) -> Tensor:
    """``views`` stacks view one of every graph, then view two of every graph."""
    z = heads.project(model.forward(views, training=training, dropout_rng=dropout_rng))
    B = views.n_graphs // 2
    return ntxent(z[:B], z[B:], tau)


# -- optimisation ------------------------------------------------------------------

def lr_at(step: int, peak: float, warmup: int, total: int, final: float = 0.0) -> float:
    """Linear warmup to ``peak`` then cosine decay to ``final`` at ``total``."""
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    span = max(1, total - warmup)
    progress = min(1.0, (step - warmup) / span)
    return final + 0.5 * (peak - final) * (1.0 + math.cos(math.pi * progress))


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NumericError("parameter update produced a non-finite value")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, cause: str):
        super().__init__(f"training diverged at step {step}: {cause}")
        self.step = step


@dataclass
class PretrainConfig:
    objective: str = "both"  # both | mask | contrast
    batch_size: int = 16
    lr: float = 1e-3
    warmup: int = 10
    final_lr: float = 1e-5
    weight_decay: float = 0.0
    k: int | None = 3
    aug: AugConfig = field(default_factory=AugConfig)
    tau: float = NTXENT_TAU
    decoder_hidden: int = 64
    proj_dim: int = 32
    schedule_steps: int | None = None

    def __post_init__(self):
        if self.objective not in ("both", "mask", "contrast"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class TraceRow:
    step: int
    mask_loss: float
    contrast_loss: float
    total: float


@dataclass
class PretrainResult:
    trace: list[TraceRow]
    halted_at: int | None = None
    halt_reason: str = ""


def pretrain(corpus: list[MolGraph], model: CPAFormer, cfg: PretrainConfig, steps: int, seed: int = 0,
             heads: PretrainHeads | None = None, stats: CorpusStats | None = None,
             halt_on_divergence: bool = True) -> tuple[PretrainResult, PretrainHeads]:
    """Run ``steps`` optimiser steps of the selected objective.

    A non-finite loss, gradient or parameter halts training; the step index is
    recorded in the result (or raised as DivergenceError when
    ``halt_on_divergence`` is False).
    """
    if not corpus:
        raise ValueError("pretraining corpus is empty")
    stats = stats or compute_corpus_stats(corpus)
    heads = heads or PretrainHeads(model.config.model_dim, model.schema, cfg.decoder_hidden,
                                   cfg.proj_dim, seed=model.config.seed)
    params = model.parameters() + heads.parameters()
    opt = Adam(params, cfg.lr, weight_decay=cfg.weight_decay)
    total_steps = cfg.schedule_steps or steps
    k = model.config.k
    prepared = {}
    result = PretrainResult([])
    for step in range(steps):
        gen = rngmod.stream(seed, "pretrain", step)
        pick = gen.choice(len(corpus), size=min(cfg.batch_size, len(corpus)), replace=False)
        graphs = [corpus[int(i)] for i in np.sort(pick)]
        drop_gen = rngmod.stream(seed, "dropout", step)
        try:
            opt.zero_grad()
            loss_m = loss_c = None
            if cfg.objective in ("both", "mask"):
                inputs = []
                for g in graphs:
                    if g.id not in prepared:
                        prepared[g.id] = prepare(g, k)
                    inputs.append(prepared[g.id])
                batch = pad_batch(inputs, k, model.schema, stats)
                plan = batch_mask_plan(batch, rngmod.stream(seed, "mask", step))
                loss_m = mask_objective(model, heads, batch, plan, training=True, dropout_rng=drop_gen)
            if cfg.objective in ("both", "contrast"):
                views = [make_views(g, cfg.aug, k, seed, step) for g in graphs]
                vb = pad_batch([v[0].as_input() for v in views] + [v[1].as_input() for v in views],
                               k, model.schema, stats)
                loss_c = contrast_objective(model, heads, vb, training=True, dropout_rng=drop_gen, tau=cfg.tau)
            if loss_m is not None and loss_c is not None:
                loss = total_loss(loss_m, loss_c)
            else:
                loss = loss_m if loss_m is not None else loss_c * CONTRAST_WEIGHT
            loss.backward()
            for p in params:
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise NumericError("non-finite gradient")
            opt.step(lr_at(step, cfg.lr, cfg.warmup, total_steps, cfg.final_lr))
        except NumericError as exc:
            if not halt_on_divergence:
                raise DivergenceError(step, str(exc)) from exc
            result.halted_at = step
            result.halt_reason = str(exc)
            log.warning("divergence at step %d: %s", step, exc)
            break
        result.trace.append(TraceRow(
            step,
            loss_m.item() if loss_m is not None else 0.0,
            loss_c.item() if loss_c is not None else 0.0,
            loss.item(),
        ))
    return result, heads


# -- fine-tuning -------------------------------------------------------------------

@dataclass
class FinetuneConfig:
    task: str = "binary"  # binary | regression
    epochs: int = 30
    batch_size: int = 32
    lr: float = 3e-3
    warmup: int = 10
    seed: int = 0
    class_weighting: bool = True


class LinearHead:
    def __init__(self, model_dim: int, outputs: int = 1, seed: int = 0):
        gen = rngmod.stream(seed, "head")
        self.w = Tensor(_xavier(gen, (model_dim, outputs)), requires_grad=True)
        self.b = Tensor(np.zeros(outputs), requires_grad=True)

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, emb: Tensor) -> Tensor:
        return emb @ self.w + self.b


def weighted_bce(logits: Tensor, labels: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy on logits; positives weighted by ``pos_weight``."""
    y = labels.astype(np.float64)
    z = tc.reshape(logits, (labels.size,))
    # -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    loss = tc.softplus(-z) * (y * pos_weight) + tc.softplus(z) * (1.0 - y)
    return tc.mean(loss)


def predict(model: CPAFormer, head: LinearHead, inputs: list[GraphInput], batch_size: int = 64,
            stats: CorpusStats | None = None) -> np.ndarray:
    out = []
    for start in range(0, len(inputs), batch_size):
        b = pad_batch(inputs[start:start + batch_size], model.config.k, model.schema, stats)
        out.append(head(model.forward(b)).data[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def finetune(train: list[tuple[MolGraph, float]], model: CPAFormer, head: LinearHead | None = None,
             cfg: FinetuneConfig | None = None, test: list[tuple[MolGraph, float]] | None = None,
             stats: CorpusStats | None = None) -> dict:
    """Supervised training of encoder + linear head on mean-pooled embeddings.

    Returns a dict with the loss trace and, when ``test`` is given, test
    predictions and the task metric (ROC-AUC or RMSE).
    """
    from .evalstats import rmse, roc_auc

    cfg = cfg or FinetuneConfig()
    head = head or LinearHead(model.config.model_dim, 1, seed=cfg.seed)
    k = model.config.k
    stats = stats or compute_corpus_stats([g for g, _ in train])
    inputs = [prepare(g, k) for g, _ in train]
    labels = np.array([y for _, y in train], dtype=np.float64)
    pos_weight = 1.0
    if cfg.task == "binary" and cfg.class_weighting:
        npos = labels.sum()
        pos_weight = float((labels.size - npos) / npos) if npos > 0 else 1.0
    params = model.parameters() + head.parameters()
    opt = Adam(params, cfg.lr)
    steps_per_epoch = math.ceil(len(inputs) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rngmod.stream(cfg.seed, "finetune", epoch).permutation(len(inputs))
        for start in range(0, len(inputs), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            b = pad_batch([inputs[i] for i in idx], k, model.schema, stats)
            out = head(model.forward(b, training=True, dropout_rng=rngmod.stream(cfg.seed, "ft-drop", step)))
            if cfg.task == "binary":
                loss = weighted_bce(out, labels[idx], pos_weight)
            else:
                diff = tc.reshape(out, (idx.size,)) - Tensor(labels[idx])
                loss = tc.mean(diff * diff)
            opt.zero_grad()
            loss.backward()
            opt.step(lr_at(step, cfg.lr, cfg.warmup, total))
            trace.append(loss.item())
            step += 1
    result = {"trace": trace, "head": head}
    if test is not None:
        preds = predict(model, head, [prepare(g, k) for g, _ in test], stats=stats)
        y = np.array([t for _, t in test], dtype=np.float64)
        result["predictions"] = preds
        result["metric"] = roc_auc(y, preds) if cfg.task == "binary" else rmse(y, preds)
    return result


def spd_consistency(view: View, original: MolGraph, k: int | None) -> bool:
    """Per-view supports never contain a pair closer than in the original graph."""
    from .topo import all_pairs_spd

    full = all_pairs_spd(original).entries
    for i, (js, ds) in enumerate(zip(view.supports.neighbors, view.supports.spd)):
        oi = view.provenance[i]
        for j, d in zip(js, ds):
            od = full[oi, view.provenance[j]]
            if od == INF or d < od:
                return False
    return True
