"""Executable checks of what softmax attention, CPA and 1-WL can tell apart."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import rng as rngmod
from . import tensorcore as tc
from .batcher import pad_batch, prepare
from .graphio import MolGraph
from .tensorcore import Tensor


class Profile(str, Enum):
    UNIFORM = "UNIFORM"
    RANDOM_C2 = "RANDOM_C2"


@dataclass
class ReplicationPair:
    base: np.ndarray        # (|B|, d)
    lam: int
    lam2: int
    masses: np.ndarray      # per base value, sums to 1

    def support(self, which: int) -> tuple[np.ndarray, np.ndarray]:
        """Values and attention weights of the ``which``-th (0 or 1) support."""
        lam = self.lam if which == 0 else self.lam2
        values = np.repeat(self.base, lam, axis=0)
        alpha = np.repeat(self.masses / lam, lam)
        return values, alpha

    def value_masses(self, which: int) -> np.ndarray:
        lam = self.lam if which == 0 else self.lam2
        return np.repeat(self.masses / lam, lam).reshape(-1, lam).sum(axis=1)


def build_replication_pair(base, lam: int, lam2: int, profile: Profile = Profile.UNIFORM,
                           gen: np.random.Generator | None = None) -> ReplicationPair:
    base = np.atleast_2d(np.asarray(base, dtype=np.float64))
    if base.shape[0] == 0:
        raise ValueError("base multiset must be nonempty")
    if lam < 1 or lam2 < 1 or lam == lam2:
        raise ValueError("multiplicities must be >= 1 and distinct")
    profile = Profile(profile)
    if profile is Profile.UNIFORM:
        masses = np.full(base.shape[0], 1.0 / base.shape[0])
    else:
        gen = gen or rngmod.stream(0, "replication")
        w = gen.random(base.shape[0]) + 0.05
        masses = w / w.sum()
    return ReplicationPair(base, lam, lam2, masses)


def _softmax_output(values: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Attention output through the engine's softmax, from logits log(alpha)."""
    n = alpha.size
    weights = tc.masked_softmax(Tensor(np.log(alpha).reshape(1, n)), np.ones((1, n), dtype=bool))
    return (weights @ Tensor(values)).data[0]


def check_blindness(pair: ReplicationPair, tol: float = 1e-12, masses=None):
    """Softmax outputs of both supports and whether they agree within ``tol``.

    ``masses`` optionally overrides the second support's weights (a (C2)
    violation used as a negative control).
    """
    v1, a1 = pair.support(0)
    v2, a2 = pair.support(1)
    if masses is not None:
        a2 = np.asarray(masses, dtype=np.float64)
    o1, o2 = _softmax_output(v1, a1), _softmax_output(v2, a2)
    return (o1, o2), bool(np.max(np.abs(o1 - o2)) <= tol)


@dataclass
class SeparationResult:
    outputs: tuple[np.ndarray, np.ndarray]
    distinct: bool
    inconclusive: bool = False
    witness: int | None = None
    bound: float = 0.0


def check_cpa_separation(pair: ReplicationPair, gate, normalized: bool = False,
                         tol: float = 1e-8) -> SeparationResult:
    """CPA (or its mean-normalised form) on both supports of a replication pair.

    Sum-CPA outputs must differ on a coordinate where the gate is positive and
    the base mean is nonzero; when no such coordinate exists the result is
    flagged inconclusive.
    """
    gate = np.asarray(gate, dtype=np.float64)
    outs = []
    for which in (0, 1):
        v, a = pair.support(which)
        o = _softmax_output(v, a)
        s = v.mean(axis=0) if normalized else v.sum(axis=0)
        outs.append(o + gate * s)
    mean = pair.base.mean(axis=0)
    ok = (gate > 0) & (np.abs(mean) > 0)
    diff = np.abs(outs[0] - outs[1])
    if not ok.any():
        return SeparationResult((outs[0], outs[1]), bool(diff.max() >= tol), inconclusive=True)
    contrib = np.where(ok, np.abs(gate * (pair.lam - pair.lam2) * pair.base.shape[0] * mean), 0.0)
    r = int(np.argmax(contrib))
    return SeparationResult((outs[0], outs[1]), bool(diff.max() >= tol), witness=r, bound=float(contrib[r]))


def mean_collision(M) -> tuple[np.ndarray, np.ndarray]:
    """M and M plus its own mean: equal means, cardinalities one apart."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if M.shape[0] == 0:
        raise ValueError("multiset must be nonempty")
    return M, np.vstack([M, M.mean(axis=0, keepdims=True)])


# -- composed construction ---------------------------------------------------------

@dataclass
class RandomMLP:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @staticmethod
    def create(gen: np.random.Generator, d_in: int, hidden: int, d_out: int) -> "RandomMLP":
        # fan-in scaling keeps tanh out of saturation, where float64 ties would appear
        return RandomMLP(gen.normal(size=(d_in, hidden)) / np.sqrt(d_in), gen.normal(size=hidden) * 0.1,
                         gen.normal(size=(hidden, d_out)) / np.sqrt(hidden), gen.normal(size=d_out) * 0.1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2


def composed_cpa(x, neighbors, eps: float, phi, psi, g) -> np.ndarray:
    """psi((1 + eps) phi(x) + g * sum_j phi(x_j))."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = np.asarray(g, dtype=np.float64)
    if np.any(g <= 0):
        raise ValueError("gate must be strictly positive")
    h = (1.0 + eps) * phi(np.asarray(x, dtype=np.float64))
    nbrs = np.asarray(neighbors, dtype=np.float64)
    if nbrs.size:
        h = h + g * phi(nbrs).sum(axis=0)
    return psi(h)


@dataclass
class InjectivityReport:
    domain_size: int
    trials: int
    distinct_inputs: int
    collisions: int
    min_distance: float
    witnesses: list = field(default_factory=list)


def enumerate_domain(alphabet: int, max_size: int) -> list[tuple[int, tuple[int, ...]]]:
    """Every (center symbol, multiset of at most ``max_size`` symbols)."""
    multisets = [m for s in range(max_size + 1)
                 for m in itertools.combinations_with_replacement(range(alphabet), s)]
    return [(c, m) for c in range(alphabet) for m in multisets]


def injectivity_trial(trials: int = 1000, alphabet: int = 4, max_size: int = 5, seed: int = 0,
                      dim: int = 16, hidden: int = 32, resolution: float = 1e-9) -> InjectivityReport:
    """Empirical injectivity of :func:`composed_cpa` with random weights.

    The whole finite domain is evaluated; ``trials`` additional random draws
    (with replacement) must collide exactly when the inputs are equal.
    """
    gen = rngmod.stream(seed, "thm1", "weights")
    phi = RandomMLP.create(gen, alphabet, hidden, dim)
    psi = RandomMLP.create(gen, dim, hidden, dim)
    eps = float(gen.uniform(0.1, 1.0))
    g = 1.0 / (1.0 + np.exp(-gen.normal(size=dim)))
    eye = np.eye(alphabet)

    def run(item):
        c, m = item
        return composed_cpa(eye[c], eye[list(m)] if m else np.zeros((0, alphabet)), eps, phi, psi, g)

    domain = enumerate_domain(alphabet, max_size)
    outs = np.array([run(item) for item in domain])
    dist = np.abs(outs[:, None, :] - outs[None, :, :]).max(axis=2)
    np.fill_diagonal(dist, np.inf)
    bad = np.argwhere(np.triu(dist <= resolution, 1))
    collisions = int(bad.shape[0])
    witnesses = [(domain[i], domain[j]) for i, j in bad[:10]]

    draw = rngmod.stream(seed, "thm1", "draws").integers(len(domain), size=trials)
    for a, b in zip(draw[:-1], draw[1:]):
        same_in = a == b
        same_out = np.max(np.abs(outs[a] - outs[b])) <= resolution
        if same_in != same_out:
            collisions += 1
            witnesses.append((domain[a], domain[b]))
    return InjectivityReport(len(domain), trials, len(set(draw.tolist())), collisions,
                             float(dist.min()), witnesses)


# -- 1-WL ---------------------------------------------------------------------------

class Interner:
    """Collision-free signature -> colour id table."""

    def __init__(self):
        self.table: dict[str, int] = {}

    def intern_all(self, signatures: list[str]) -> list[int]:
        for sig in sorted(set(signatures)):
            if sig not in self.table:
                self.table[sig] = len(self.table)
        return [self.table[s] for s in signatures]


@dataclass
class ColorMap:
    colors: np.ndarray
    iterations: int


class WLInit(str, Enum):
    UNIFORM = "UNIFORM"
    FEATURES = "FEATURES"


def _initial_signatures(g: MolGraph, init: WLInit) -> list[str]:
    if init is WLInit.UNIFORM:
        return ["*"] * g.n
    return [f"{a.element}|{a.formal_charge}|{a.num_h}|{int(a.aromatic)}" for a in g.atoms]


def wl_refine(g: MolGraph, init: WLInit = WLInit.UNIFORM, interner: Interner | None = None,
              max_iter: int | None = None) -> ColorMap:
    """Refine colours until one more round splits no class."""
    init = WLInit(init)
    interner = interner or Interner()
    adj = g.adjacency()
    colors = interner.intern_all(["0:" + s for s in _initial_signatures(g, init)])
    it = 0
    limit = g.n if max_iter is None else max_iter
    while it < limit:
        sigs = [f"{it + 1}:{colors[i]}|" + ",".join(map(str, sorted(colors[j] for j in adj[i])))
                for i in range(g.n)]
        new = interner.intern_all(sigs)
        it += 1
        if len(set(new)) == len(set(colors)):
            colors = new
            break
        colors = new
    return ColorMap(np.array(colors, dtype=np.int64), it)


def wl_histogram(cmap: ColorMap) -> list[tuple[int, int]]:
    vals, counts = np.unique(cmap.colors, return_counts=True)
    return [(int(v), int(c)) for v, c in zip(vals, counts)]


def disjoint_union(g1: MolGraph, g2: MolGraph) -> MolGraph:
    from .graphio import BondRecord

    off = g1.n
    bonds = list(g1.bonds) + [BondRecord(b.u + off, b.v + off, b.order, b.conjugated, b.in_ring)
                              for b in g2.bonds]
    return MolGraph(f"{g1.id}+{g2.id}", list(g1.atoms) + list(g2.atoms), bonds)


def wl_equivalent(g1: MolGraph, g2: MolGraph, init: WLInit = WLInit.UNIFORM):
    """Refine the disjoint union jointly and compare the two halves' histograms."""
    cmap = wl_refine(disjoint_union(g1, g2), init)
    h1 = wl_histogram(ColorMap(cmap.colors[:g1.n], cmap.iterations))
    h2 = wl_histogram(ColorMap(cmap.colors[g1.n:], cmap.iterations))
    return h1 == h2, h1, h2


def pooled_embedding(model, g: MolGraph) -> np.ndarray:
    k = model.config.k
    batch = pad_batch([prepare(g, k, with_paths=model.config.path_edge_bias)], k, model.schema,
                      spd_clip=model.config.spd_clip)
    return model.forward(batch).data[0]


def wl_hard_pair_model_check(model, g1: MolGraph, g2: MolGraph, tol: float = 1e-9):
    e1, e2 = pooled_embedding(model, g1), pooled_embedding(model, g2)
    return (e1, e2), bool(np.max(np.abs(e1 - e2)) <= tol)


# -- suites ------------------------------------------------------------------------

@dataclass
class TrialOutcome:
    trial: int
    passed: bool
    detail: str = ""


def random_pair(gen: np.random.Generator, positive_mean: bool = False) -> ReplicationPair:
    size = int(gen.integers(1, 6))
    dim = int(gen.integers(2, 9))
    base = gen.normal(size=(size, dim))
    if positive_mean:
        base = np.abs(base) + 0.1
    lam, lam2 = gen.choice(np.arange(1, 7), size=2, replace=False)
    return build_replication_pair(base, int(lam), int(lam2), Profile.RANDOM_C2, gen)


def run_suite(suite: str, trials: int = 100, seed: int = 0) -> list[TrialOutcome]:
    out = []
    if suite == "thm1":
        rep = injectivity_trial(trials, seed=seed)
        return [TrialOutcome(0, rep.collisions == 0,
                             f"domain={rep.domain_size} collisions={rep.collisions} "
                             f"min_distance={rep.min_distance:.3e}")]
    if suite == "wl":
        from .graphio import parse_smiles
        same, _, _ = wl_equivalent(parse_smiles("C1CCCCC1", "C6"), parse_smiles("C1CC1.C1CC1", "2C3"))
        split, _, _ = wl_equivalent(parse_smiles("CC(C)C", "S3"), parse_smiles("CCCC", "P4"))
        return [TrialOutcome(0, same, "C6 vs 2xC3 equivalent"), TrialOutcome(1, not split, "S3 vs P4 split")]
    for t in range(trials):
        gen = rngmod.stream(seed, "suite", suite, t)
        if suite == "prop1":
            pair = random_pair(gen)
            (o1, o2), ok = check_blindness(pair)
            out.append(TrialOutcome(t, ok, f"max|diff|={np.max(np.abs(o1 - o2)):.3e}"))
        elif suite == "prop2":
            pair = random_pair(gen, positive_mean=True)
            gate = 1.0 / (1.0 + np.exp(-gen.normal(size=pair.base.shape[1])))
            sep = check_cpa_separation(pair, gate)
            norm = check_cpa_separation(pair, gate, normalized=True)
            nd = float(np.max(np.abs(norm.outputs[0] - norm.outputs[1])))
            ok = sep.distinct and not sep.inconclusive and nd <= 1e-12
            out.append(TrialOutcome(t, ok, f"bound={sep.bound:.3e} norm_diff={nd:.3e}"))
        elif suite == "cor1":
            M = gen.normal(size=(int(gen.integers(1, 8)), int(gen.integers(1, 6))))
            a, b = mean_collision(M)
            d = float(np.max(np.abs(a.mean(0) - b.mean(0))))
            out.append(TrialOutcome(t, d <= 1e-12 and b.shape[0] == a.shape[0] + 1, f"mean_diff={d:.3e}"))
        else:
            raise ValueError(f"unknown suite {suite!r}")
    return out
