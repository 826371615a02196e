"""A small dense tensor engine with reverse-mode differentiation.

Tensors wrap float64 numpy arrays.  Every operation records its parents and a
backward closure; :meth:`Tensor.backward` walks the recorded graph in reverse
topological order and accumulates gradients into leaves that require them.

Broadcasting is deliberately narrow: elementwise binary ops accept operands of
identical shape, a trailing row vector (shape ``(d,)`` against ``(..., d)``),
or a python scalar.  Anything fancier goes through a dedicated op with its own
backward rule so every gradient formula can be audited in one place.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5


class NumericError(FloatingPointError):
    """Raised when an operation produces NaN or infinity."""


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite result in {op}")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if _op == "leaf":
            arr = np.array(arr, dtype=np.float64, copy=True)
            _check_finite(arr, "leaf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self._op = _op

    # -- basics -------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    # -- differentiation ----------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward through non-scalar tensor of shape {self.shape}")
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    parents = tuple(parents)
    _check_finite(data, op)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, requires_grad=False, _op=op + "(const)")
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise binary -------------------------------------------------------

def _broadcast_kind(a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "row"
    if b.size == 1 and b.ndim == 0:
        return "scalar"
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, kind: str) -> np.ndarray:
    if kind == "same":
        return g
    if kind == "row":
        return g.reshape(-1, g.shape[-1]).sum(axis=0)
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            c = float(b)
            return _make(a.data + c, (a,), lambda g: (g,), "add")
        b = Tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    return _make(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, kind)), "add")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    """Hadamard product (same shape, trailing row vector, or scalar)."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            c = float(b)
            return _make(a.data * c, (a,), lambda g: (g * c,), "mul")
        b = Tensor(b)
    kind = _broadcast_kind(a.data, b.data)
    ad, bd = a.data, b.data

    def backward(g):
        return g * bd, _reduce_to(g * ad, kind)

    return _make(ad * bd, (a, b), backward, "mul")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each leading-axis slice ``x[i]`` by the scalar ``s[i]``."""
    x, s = as_tensor(x), as_tensor(s)
    if s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows expects s of shape ({x.shape[0]},), got {s.shape}")
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    xd, sd = x.data, s.data

    def backward(g):
        axes = tuple(range(1, x.ndim))
        return g * sd[expand], (g * xd).sum(axis=axes) if axes else g * xd

    return _make(xd * sd[expand], (x, s), backward, "scale_rows")


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0):
        raise NumericError("reciprocal of zero")
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


# -- unary --------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of non-positive value")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0.0, x)
    return _make(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data >= floor
    return _make(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,), "clamp_min")


# -- linear algebra and reductions -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def index(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (a,), backward, "index")


def _scatter_rows(idx: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    """Row scatter-add (``np.add.at`` semantics) via sort and reduceat."""
    out = np.zeros((n,) + vals.shape[1:])
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sidx = idx[order]
    starts = np.r_[0, np.nonzero(np.diff(sidx))[0] + 1]
    out[sidx[starts]] = np.add.reduceat(vals[order], starts, axis=0)
    return out


def gather(table: Tensor, idx: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by the integer array ``idx`` (any shape)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather index out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        return (_scatter_rows(idx.reshape(-1), g.reshape((-1,) + shape[1:]), shape[0]),)

    return _make(table.data[idx], (table,), backward, "gather")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, backward, "concat")


def rowdot(q: Tensor, k: Tensor) -> Tensor:
    """``out[t, l] = q[t] . k[t, l]`` for q of shape (T, d) and k of shape (T, L, d)."""
    qd, kd = q.data, k.data
    if kd.ndim != 3 or qd.shape != (kd.shape[0], kd.shape[2]):
        raise ShapeError(f"rowdot shapes {q.shape} and {k.shape}")

    def backward(g):
        return np.einsum("tl,tld->td", g, kd), g[:, :, None] * qd[:, None, :]

    return _make(np.einsum("td,tld->tl", qd, kd), (q, k), backward, "rowdot")


def weighted_sum(w: Tensor, v: Tensor) -> Tensor:
    """``out[t] = sum_l w[t, l] * v[t, l]`` for w (T, L) and v (T, L, d)."""
    w, v = as_tensor(w), as_tensor(v)
    wd, vd = w.data, v.data
    if vd.ndim != 3 or wd.shape != vd.shape[:2]:
        raise ShapeError(f"weighted_sum shapes {w.shape} and {v.shape}")

    def backward(g):
        return np.einsum("td,tld->tl", g, vd), wd[:, :, None] * g[:, None, :]

    return _make(np.einsum("tl,tld->td", wd, vd), (w, v), backward, "weighted_sum")


def segment_sum(x: Tensor, segments: np.ndarray, count: int) -> Tensor:
    """Sum rows of ``x`` into ``count`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    out = _scatter_rows(segments, x.data, count)
    return _make(out, (x,), lambda g: (g[segments],), "segment_sum")


def mean_pool(x: Tensor, segments: np.ndarray | None = None, count: int | None = None) -> Tensor:
    """Arithmetic mean of rows, optionally per segment."""
    if segments is None:
        return mean(x, axis=0)
    segments = np.asarray(segments, dtype=np.int64)
    sizes = np.bincount(segments, minlength=count).astype(np.float64)
    if np.any(sizes == 0):
        raise ShapeError("mean_pool over an empty segment")
    summed = segment_sum(x, segments, count)
    return scale_rows(summed, Tensor(1.0 / sizes))


# -- normalisation and softmax ----------------------------------------------

def layer_norm(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis (no affine part)."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    with np.errstate(over="ignore"):
        var = (xc * xc).mean(axis=-1, keepdims=True)
    _check_finite(var, "layer_norm variance")
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gy),)

    return _make(out, (x,), backward, "layer_norm")


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Forbidden positions receive exactly zero weight and exactly zero gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeError(f"mask shape {mask.shape} != logits shape {logits.shape}")
    if not np.all(mask.any(axis=-1)):
        raise ValueError("masked_softmax row with every position forbidden")
    a = np.where(mask, logits.data, -np.inf)
    m = a.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(a - m), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return _make(p, (logits,), backward, "masked_softmax")


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax over the last axis."""
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (logits,), backward, "log_softmax")


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """L2-normalise each row of a matrix."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    if np.any(norm <= eps):
        raise NumericError("normalize_rows on a zero vector")
    out = xd / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,)

    return _make(out, (x,), backward, "normalize_rows")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout with a mask drawn from ``rng``; identity at evaluation."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, keep)


# -- gradient checking --------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between backward() and central differences.

    ``f`` re-evaluates the scalar loss from the current contents of ``params``,
    which are perturbed in place.  When ``coords`` is given, that many
    coordinates per parameter are sampled with ``rng`` instead of all of them.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        if coords is None or coords >= flat.size:
            picks = np.arange(flat.size)
        else:
            picks = (rng or np.random.default_rng(0)).choice(flat.size, size=coords, replace=False)
        for c in picks:
            orig = flat[c]
            flat[c] = orig + h
            fp = f().item()
            flat[c] = orig - h
            fm = f().item()
            flat[c] = orig
            num = (fp - fm) / (2.0 * h)
            if not np.isfinite(num):
                raise NumericError("non-finite finite-difference evaluation")
            err = float(relative_error(np.array(a.reshape(-1)[c]), np.array(num), floor))
            worst = max(worst, err)
    return worst
