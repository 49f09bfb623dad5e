"""Small reverse-mode autodiff over numpy arrays.

Only the primitives the sentence-memory transformer needs are provided:
matmul, add/mul/scale, GELU, masked row softmax, layer norm, row gather,
concat/stack/slice, reshape/transpose, weighted cross-entropy, dropout and
detach. Every op records a closure that maps the upstream gradient to
gradients for its parents; :func:`backward` walks the graph once in reverse
topological order and then releases it.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

NEG_INF = -1e9  # additive mask sentinel; true infinities produce NaN in 0 * inf

_grad_enabled = True


class InputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class GraphReleasedError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def backward(self):
        return backward(self)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw)


def scale(a, c: float):
    def bw(g):
        return (g * c,)

    return _make(a.data * c, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh-approximated GELU (the GPT-2 form)."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return _make(out, (a,), bw)


# ------------------------------------------------------------------- linear


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise InputError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise InputError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # shared weight: fold the batch axes into one reduction
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ------------------------------------------------------------------ softmax


def row_softmax(a, mask=None):
    """Softmax over the last axis with an optional additive mask.

    ``mask`` is a constant array broadcastable to ``a`` holding 0 or NEG_INF.
    Rows whose every column is masked produce all zeros.
    """
    x = a.data
    dead = None
    if mask is not None:
        mask = np.asarray(mask)
        try:
            x = x + mask
        except ValueError as exc:
            raise InputError(f"mask shape {mask.shape} incompatible with {a.shape}") from exc
        full = np.broadcast_to(mask, x.shape)
        dead = np.all(full <= NEG_INF / 2, axis=-1, keepdims=True)
        if not dead.any():
            dead = None
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    if dead is not None:
        y = np.where(dead, 0.0, y).astype(x.dtype, copy=False)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), bw)


# ---------------------------------------------------------------- layer norm


def layer_norm(a, gain, bias, eps=1e-5):
    if eps <= 0:
        raise InputError("layer_norm eps must be positive")
    x = a.data
    d = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, d).sum(axis=0)
        if a.requires_grad:
            gh = g * gd
            gx = rstd * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggain, gbias

    return _make(out, (a, gain, bias), bw)


# ------------------------------------------------------------ index / shape


def gather_rows(table, ids):
    """Rows of a 2-D ``table`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise InputError(f"gather index out of range [0, {n})")
    shape = table.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), bw)


def _is_basic_index(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in idx)


def take(a, idx):
    """Numpy-style indexing; basic slices and integer arrays are supported."""
    shape = a.shape
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw)


def slice_rows(a, start, stop):
    return take(a, (slice(start, stop),))


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise InputError("concat of no tensors")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def concat_rows(tensors):
    return concat(tensors, axis=0)


def stack(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise InputError("stack of no tensors")

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def reshape(a, shape):
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bw)


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw)


# ------------------------------------------------------------------- losses


def weighted_cross_entropy(logits, targets, weights, reduction="mean"):
    """Weighted next-token cross-entropy over the rows of ``logits``.

    ``reduction="mean"`` divides by the weight total; ``"sum"`` returns the
    raw weighted sum (callers that pool several steps normalise once).
    """
    if logits.ndim != 2:
        raise InputError(f"logits must be [n, V], got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    w = np.asarray(weights, dtype=logits.dtype)
    n, V = logits.shape
    if targets.shape != (n,) or w.shape != (n,):
        raise InputError("targets/weights must have one entry per logits row")
    if np.any(w < 0):
        raise InputError("negative loss weight")
    total = float(w.sum())
    if reduction == "mean" and total <= 0:
        raise InputError("all loss weights are zero")
    if n and (targets.min() < 0 or targets.max() >= V):
        raise InputError("target id out of range")
    x = logits.data
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    nll = lse - z[rows, targets]
    norm = total if reduction == "mean" else 1.0
    value = float((w * nll).sum() / norm)

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, targets] -= 1.0
        p *= (w / norm)[:, None] * g
        return (p,)

    return _make(np.asarray(value, dtype=logits.dtype), (logits,), bw)


def token_nll(logits, targets):
    """Per-row negative log-likelihood as a plain array (no graph)."""
    x = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    targets = np.asarray(targets, dtype=np.int64)
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    return lse - np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]


# ------------------------------------------------------------ regularisers


def apply_dropout(a, rate, rng, training=True):
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return mul(a, Tensor(keep))


def detach(a):
    """Same values, no history: gradients stop here."""
    return Tensor(a.data)


# ----------------------------------------------------------------- backward


def _topo_order(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss, leaves=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns a dict leaf -> gradient. Leaves passed in ``leaves`` that the
    loss does not reach get zero arrays. The graph is released afterwards.
    """
    if loss._released:
        raise GraphReleasedError("graph already released by a previous backward()")
    if loss.data.size != 1:
        raise InputError(f"backward needs a scalar loss, got shape {loss.shape}")
    result = {}
    if loss.requires_grad:
        order = _topo_order(loss)
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._parents:
                if g is not None:
                    pgrads = node._backward(g)
                    for p, pg in zip(node._parents, pgrads):
                        if pg is None or not p.requires_grad:
                            continue
                        k = id(p)
                        if k in grads:
                            grads[k] = grads[k] + pg
                        else:
                            grads[k] = pg
                node._parents = ()
                node._backward = None
                node._released = True
            elif g is not None:
                g = np.asarray(g, dtype=node.data.dtype).reshape(node.shape)
                node.grad = g if node.grad is None else node.grad + g
                result[node] = node.grad
    loss._released = True
    for leaf in leaves or ():
        if leaf not in result:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            result[leaf] = leaf.grad
    return result


# -------------------------------------------------------------- gradcheck


def numerical_grad(f, x: np.ndarray, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = float(f())
        x[i] = old - h
        fm = float(f())
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)
