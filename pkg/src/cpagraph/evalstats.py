"""Metrics, size strata, size-only baselines and paired significance tests."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import rankdata

from . import rng as rngmod
from .graphio import MolGraph

log = logging.getLogger(__name__)


class TaskKind(str, Enum):
    REGRESSION = "REGRESSION"
    BINARY = "BINARY"
    MULTILABEL = "MULTILABEL"


class MetricError(ValueError):
    pass


def _pair(y, p):
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise MetricError(f"length mismatch: {y.shape} vs {p.shape}")
    if y.shape[0] < 2:
        raise MetricError("metrics need at least two instances")
    return y, p


def rmse(y, p) -> float:
    y, p = _pair(y, p)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def mae(y, p) -> float:
    y, p = _pair(y, p)
    return float(np.mean(np.abs(y - p)))


def _binary(y):
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("binary labels must be 0 or 1")
    npos = int(y.sum())
    if npos == 0 or npos == y.size:
        raise MetricError("AUC/AP need both classes present")
    return npos


def roc_auc(y, scores) -> float:
    """Mann-Whitney statistic with midranks for tied scores."""
    y, s = _pair(y, scores)
    npos = _binary(y)
    nneg = y.size - npos
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - npos * (npos + 1) / 2) / (npos * nneg))


def average_precision(y, scores) -> float:
    """Step-wise area under precision-recall, one step per distinct score."""
    y, s = _pair(y, scores)
    npos = _binary(y)
    order = np.argsort(-s, kind="mergesort")
    y, s = y[order], s[order]
    last = np.r_[np.nonzero(np.diff(s))[0], y.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / npos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def spearman(y, p) -> float:
    y, p = _pair(y, p)
    ry, rp = rankdata(y), rankdata(p)
    if ry.std() == 0 or rp.std() == 0:
        raise MetricError("Spearman undefined for constant input")
    return float(np.corrcoef(ry, rp)[0, 1])


@dataclass
class MultilabelAP:
    value: float
    used: int
    skipped: int


def multilabel_ap(Y, S) -> MultilabelAP:
    """Mean per-label AP; NaN labels are missing and single-class labels skipped."""
    Y = np.asarray(Y, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    vals, skipped = [], 0
    for c in range(Y.shape[1]):
        ok = ~np.isnan(Y[:, c])
        y = Y[ok, c]
        if y.size < 2 or y.sum() == 0 or y.sum() == y.size:
            skipped += 1
            continue
        vals.append(average_precision(y, S[ok, c]))
    if not vals:
        raise MetricError("no label has both classes")
    return MultilabelAP(float(np.mean(vals)), len(vals), skipped)


METRICS = {"rmse": rmse, "mae": mae, "auc": roc_auc, "ap": average_precision, "spearman": spearman}
LOWER_IS_BETTER = {"rmse", "mae"}


# -- strata ------------------------------------------------------------------------

STRATA = (("small", 0, 30), ("mid", 30, 50), ("large", 50, None))


def stratum(n: int) -> str:
    if n < 1:
        raise ValueError("graph size must be positive")
    for name, lo, hi in STRATA:
        if n >= lo and (hi is None or n < hi):
            return name
    raise AssertionError("unreachable")


def stratified_metric(sizes, y, p, metric: str = "rmse") -> dict[str, float | None]:
    fn = METRICS[metric]
    names = np.array([stratum(int(n)) for n in sizes])
    out = {}
    for name, _, _ in STRATA:
        sel = names == name
        try:
            out[name] = fn(np.asarray(y)[sel], np.asarray(p)[sel]) if sel.sum() >= 2 else None
        except MetricError:
            out[name] = None
    return out


# -- size-only baselines -----------------------------------------------------------

def size_features(g: MolGraph, k: int | None = 3) -> np.ndarray:
    """[N, mean |S(i)|, max |S(i)|]."""
    from .topo import truncated_spd

    sizes = truncated_spd(g, k).sizes()
    return np.array([g.n, sizes.mean(), sizes.max()], dtype=np.float64)


@dataclass
class LinearModel:
    kind: TaskKind
    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    class_weight: float = 1.0

    def decision(self, X) -> np.ndarray:
        X = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean) / self.scale
        return X @ self.coef + self.intercept

    def predict(self, X) -> np.ndarray:
        z = self.decision(X)
        return 1.0 / (1.0 + np.exp(-z)) if self.kind is TaskKind.BINARY else z


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd, mu, sd


def fit_ridge(X, y, lam: float = 1.0) -> LinearModel:
    """Closed-form ridge on standardised features; the intercept is not penalised."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    Z, mu, sd = _standardize(X)
    ym = y.mean()
    A = Z.T @ Z + lam * np.eye(Z.shape[1])
    coef = np.linalg.solve(A, Z.T @ (y - ym)) if lam > 0 else np.linalg.lstsq(Z, y - ym, rcond=None)[0]
    return LinearModel(TaskKind.REGRESSION, coef, float(ym), mu, sd)


def fit_logistic(X, y, pos_weight: float = 1.0, lam: float = 1e-4, tol: float = 1e-8,
                 max_iter: int = 100) -> LinearModel:
    """Weighted L2-regularised logistic regression by Newton steps to ``tol``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    Z, mu, sd = _standardize(X)
    A = np.c_[np.ones(len(Z)), Z]
    w = np.where(y == 1, pos_weight, 1.0)
    beta = np.zeros(A.shape[1])
    reg = lam * np.r_[0.0, np.ones(Z.shape[1])]
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(A @ beta)))
        grad = A.T @ (w * (p - y)) / len(y) + reg * beta
        if np.max(np.abs(grad)) < tol:
            break
        H = (A * (w * p * (1 - p))[:, None]).T @ A / len(y) + np.diag(reg + 1e-12)
        beta -= np.linalg.solve(H, grad)
    return LinearModel(TaskKind.BINARY, beta[1:], float(beta[0]), mu, sd, pos_weight)


WEIGHT_GRID = (0.5, 1.0, 2.0, 4.0, 8.0)


def size_only_baseline(X, y, kind: TaskKind, lam: float = 1.0, val=None) -> LinearModel:
    """Ridge for regression; logistic with a class-weight grid picked on ``val``.

    ``val`` is an optional ``(X_val, y_val)``; without it the weight is the
    inverse class ratio.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 5:
        raise ValueError("size-only baseline needs at least 5 training instances")
    kind = TaskKind(kind)
    if kind is TaskKind.REGRESSION:
        return fit_ridge(X, y, lam)
    if y.sum() == 0 or y.sum() == y.size:
        p = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        return LinearModel(kind, np.zeros(X.shape[1]), float(np.log(p / (1 - p))),
                           X.mean(axis=0), np.ones(X.shape[1]))
    if val is None:
        return fit_logistic(X, y, (y.size - y.sum()) / y.sum())
    best, best_score = None, -np.inf
    for wt in WEIGHT_GRID:
        model = fit_logistic(X, y, wt)
        try:
            score = roc_auc(val[1], model.decision(val[0]))
        except MetricError:
            score = -average_log_loss(val[1], model.predict(val[0]))
        if score > best_score:
            best, best_score = model, score
    return best


def average_log_loss(y, p) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# -- significance ------------------------------------------------------------------

@dataclass
class BootstrapResult:
    delta_mean: float
    ci: tuple[float, float]
    p_value: float
    resamples: int
    redraws: int
    deltas: np.ndarray = field(repr=False, default=None)
    indices: np.ndarray = field(repr=False, default=None)


def resample_indices(n: int, resamples: int, seed: int) -> np.ndarray:
    """The shared index matrix, shape (resamples, n)."""
    return rngmod.stream(seed, "bootstrap").integers(n, size=(resamples, n))


def paired_bootstrap(a, b, labels, metric: str = "rmse", resamples: int = 10000, seed: int = 0,
                     max_redraws: int = 100) -> BootstrapResult:
    """Delta = metric(a) - metric(b) under one shared resample stream.

    Resamples on which the metric is undefined are redrawn from a separate
    stream so the reported count stays exact.  The p-value is the two-sided
    bootstrap sign test ``min(1, 2 min(P(delta <= 0), P(delta >= 0)))``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not (a.shape == b.shape == y.shape):
        raise MetricError("predictions and labels must align")
    fn = METRICS[metric]
    n = y.shape[0]
    idx = resample_indices(n, resamples, seed)
    redraw = rngmod.stream(seed, "bootstrap", "redraw")
    deltas = np.empty(resamples)
    redraws = 0
    for r in range(resamples):
        for attempt in range(max_redraws + 1):
            ii = idx[r]
            try:
                deltas[r] = fn(y[ii], a[ii]) - fn(y[ii], b[ii])
                break
            except MetricError:
                if attempt == max_redraws:
                    raise
                idx[r] = redraw.integers(n, size=n)
                redraws += 1
    if redraws:
        log.info("bootstrap redrew %d undefined resamples", redraws)
    lo, hi = np.percentile(deltas, [2.5, 97.5])
    p = min(1.0, 2.0 * min(np.mean(deltas <= 0), np.mean(deltas >= 0)))
    return BootstrapResult(float(deltas.mean()), (float(lo), float(hi)), float(p), resamples,
                           redraws, deltas, idx)


def holm_adjust(p_values) -> list[float]:
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="mergesort")
    adj = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adj = np.maximum.accumulate(adj)
    out = np.empty(m)
    out[order] = adj
    return out.tolist()


def partial_correlation(x, y, z) -> float:
    """Pearson correlation of x and y after regressing both on [1, z]."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.size < 4:
        raise ValueError("partial correlation needs at least 4 samples")
    if np.ptp(z) == 0:
        raise ValueError("control variable is constant")
    A = np.c_[np.ones(z.size), z]
    rx = x - A @ np.linalg.lstsq(A, x, rcond=None)[0]
    ry = y - A @ np.linalg.lstsq(A, y, rcond=None)[0]
    sx, sy = np.sqrt(rx @ rx), np.sqrt(ry @ ry)
    if sx < 1e-12 * max(1.0, np.abs(x).max()) or sy < 1e-12 * max(1.0, np.abs(y).max()):
        raise ValueError("zero-variance residuals")
    return float(rx @ ry / (sx * sy))


# -- size-shift split --------------------------------------------------------------

def scaffold_core(g: MolGraph) -> MolGraph | None:
    """Repeatedly strip degree <= 1 atoms; None when nothing cyclic remains."""
    keep = np.ones(g.n, dtype=bool)
    adj = g.adjacency()
    deg = g.degrees().copy()
    stack = [i for i in range(g.n) if deg[i] <= 1]
    while stack:
        i = stack.pop()
        if not keep[i]:
            continue
        keep[i] = False
        for j in adj[i]:
            if keep[j]:
                deg[j] -= 1
                if deg[j] <= 1:
                    stack.append(j)
    if not keep.any():
        return None
    return g.subgraph(np.nonzero(keep)[0])[0]


def scaffold_key(g: MolGraph) -> str:
    """Stable WL-histogram hash of the cyclic core."""
    from .expressivity import Interner, WLInit, wl_refine

    core = scaffold_core(g)
    if core is None:
        return "acyclic"
    interner = Interner()
    cmap = wl_refine(core, WLInit.FEATURES, interner)
    names = {v: k for k, v in interner.table.items()}
    hist = sorted(names[int(c)] for c in cmap.colors)
    return hashlib.sha256("\n".join(hist).encode()).hexdigest()[:16]


@dataclass
class SizeShiftSplit:
    train: list[int]
    test: list[int]
    groups: dict[str, list[int]]


def size_shift_split(graphs: list[MolGraph], key=scaffold_key) -> SizeShiftSplit:
    """Within scaffold groups holding both small and large members, large go to test."""
    groups: dict[str, list[int]] = {}
    for i, g in enumerate(graphs):
        groups.setdefault(key(g), []).append(i)
    train, test = [], []
    for members in groups.values():
        bins = {stratum(graphs[i].n) for i in members}
        crossing = "small" in bins and "large" in bins
        for i in members:
            (test if crossing and stratum(graphs[i].n) == "large" else train).append(i)
    if not test:
        raise ValueError("size-shift split produced an empty test set")
    return SizeShiftSplit(sorted(train), sorted(test), groups)
