"""Dense float64 tensors with reverse-mode differentiation.

Every op that touches a tensor requiring gradients records itself on an
implicit tape (a global sequence number plus a backward closure).
``backward`` replays the recorded nodes reachable from the output in
reverse recording order, which is always a valid topological order.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np

from .errors import ConfigurationError, DimensionError, EmptyNeighborhoodError

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._seq = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data.copy()

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Parameter(Tensor):
    """A named leaf tensor whose gradient is always allocated."""

    __slots__ = ("name",)

    def __init__(self, data, name=""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._seq = next(_seq)
    return out


def backward(root, grad=None):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not root.requires_grad:
        return
    if grad is None:
        if root.size != 1:
            raise DimensionError(f"backward() needs an explicit gradient for shape {root.shape}")
        grad = np.ones_like(root.data)
    nodes = []
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._backward is not None:
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
    nodes.sort(key=lambda n: n._seq, reverse=True)

    pending = {id(root): np.asarray(grad, dtype=np.float64)}
    if root._backward is None:
        _accumulate_leaf(root, pending[id(root)])
        return
    for node in nodes:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                _accumulate_leaf(parent, pg)
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + pg
            else:
                pending[id(parent)] = pg


def _accumulate_leaf(leaf, g):
    if leaf.grad is None:
        leaf.grad = np.array(g, dtype=np.float64).reshape(leaf.shape)
    else:
        leaf.grad = leaf.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return _record(out, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _record(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


# ------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------- shape


def reshape(a, shape):
    a = as_tensor(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def scatter_add(index, values, num_rows):
    """Row-wise ``np.add.at`` into ``num_rows`` rows, via bincount per column."""
    index = np.asarray(index, dtype=np.intp)
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(len(index), -1)
    cols = flat.shape[1]
    if cols == 0 or len(index) == 0:
        return np.zeros((num_rows,) + values.shape[1:])
    # offset each column into its own block of bins
    bins = (index[:, None] * cols + np.arange(cols)).ravel()
    out = np.bincount(bins, weights=flat.ravel(), minlength=num_rows * cols)
    return out.reshape((num_rows,) + values.shape[1:])


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), bw)


def take(a, index, axis=0):
    """Gather slices of ``a`` along ``axis``; repeated indices are allowed."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        if axis == 0:
            return (scatter_add(index, g, a.shape[0]),)
        full = np.zeros_like(a.data)
        np.add.at(np.moveaxis(full, axis, 0), index, np.moveaxis(g, axis, 0))
        return (full,)

    return _record(np.take(a.data, index, axis=axis), (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


# ------------------------------------------------------------ activations


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _record(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _record(a.data * scale, (a,), lambda g: (g * scale,))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    pos = a.data > 0
    neg_part = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    deriv = np.where(pos, 1.0, neg_part + alpha)
    return _record(out, (a,), lambda g: (g * deriv,))


def identity(a):
    return as_tensor(a)


ACTIVATIONS = {
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "elu": elu,
    "relu": relu,
    "identity": identity,
}


def activation(a, kind, slope=0.2):
    """Apply a named elementwise nonlinearity."""
    if kind not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}")
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    return ACTIVATIONS[kind](a)


# ---------------------------------------------------------------- softmax


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), bw)


def masked_softmax(scores, neighbor_mask):
    """Softmax of a 1-D score vector restricted to ``neighbor_mask``.

    ``neighbor_mask`` is a boolean array or a collection of indices. Entries
    outside the mask are exactly zero in the output.
    """
    scores = as_tensor(scores)
    mask = np.asarray(neighbor_mask)
    if mask.dtype != bool:
        idx = mask.astype(np.intp).reshape(-1)
        mask = np.zeros(scores.shape[-1], dtype=bool)
        mask[idx] = True
    if mask.shape != scores.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    if not mask.any():
        raise EmptyNeighborhoodError("softmax over an empty neighborhood")
    shifted = np.where(mask, scores.data - scores.data[mask].max(), -np.inf)
    ex = np.where(mask, np.exp(shifted), 0.0)
    out = ex / ex.sum()

    def bw(g):
        return (out * (g - (g * out).sum()),)

    return _record(out, (scores,), bw)


def segment_sum(values, segments, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets given by ``segments``."""
    values = as_tensor(values)
    segments = np.asarray(segments, dtype=np.intp)
    out = scatter_add(segments, values.data, num_segments)
    return _record(out, (values,), lambda g: (g[segments],))


def segment_softmax(scores, segments, num_segments):
    """Softmax over rows of ``scores`` that share a segment id.

    Used for attention over neighbor lists: row k is an edge, ``segments[k]``
    is the node receiving it. Stabilized by subtracting the per-segment max.
    """
    scores = as_tensor(scores)
    segments = np.asarray(segments, dtype=np.intp)
    seg_max = np.full((num_segments,) + scores.shape[1:], -np.inf)
    np.maximum.at(seg_max, segments, scores.data)
    ex = np.exp(scores.data - seg_max[segments])
    denom = scatter_add(segments, ex, num_segments)
    out = ex / denom[segments]

    def bw(g):
        weighted = scatter_add(segments, g * out, num_segments)
        return (out * (g - weighted[segments]),)

    return _record(out, (scores,), bw)


# ------------------------------------------------------------------ losses


def mse_loss(pred, truth):
    """Mean squared error over every element."""
    pred = as_tensor(pred)
    truth_data = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=np.float64)
    if pred.shape != truth_data.shape:
        raise DimensionError(f"mse_loss shape mismatch: {pred.shape} vs {truth_data.shape}")
    diff = pred.data - truth_data
    n = diff.size
    return _record(np.array((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


# --------------------------------------------------------------------- GRU


def gru_cell(x, h, wz, wr, wh, uz, ur, uh, bz, br, bh):
    """One GRU step for a batch of rows.

    x: (B, in), h: (B, hid); input matrices (in, hid), recurrent (hid, hid),
    biases (hid,). Returns the next hidden state (B, hid).
    """
    x, h = as_tensor(x), as_tensor(h)
    weights = tuple(as_tensor(w) for w in (wz, wr, wh, uz, ur, uh, bz, br, bh))
    Wz, Wr, Wh, Uz, Ur, Uh, Bz, Br, Bh = (w.data for w in weights)
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise DimensionError(f"gru_cell batch mismatch: x {x.shape}, h {h.shape}")
    if Wz.shape != (x.shape[1], h.shape[1]) or Uz.shape != (h.shape[1], h.shape[1]):
        raise DimensionError(
            f"gru_cell width mismatch: x {x.shape}, h {h.shape}, W {Wz.shape}, U {Uz.shape}"
        )
    xd, hd = x.data, h.data
    z = _sigmoid(xd @ Wz + hd @ Uz + Bz)
    r = _sigmoid(xd @ Wr + hd @ Ur + Br)
    rh = r * hd
    c = np.tanh(xd @ Wh + rh @ Uh + Bh)
    out = (1.0 - z) * hd + z * c

    def bw(g):
        da_h = g * z * (1.0 - c * c)
        d_rh = da_h @ Uh.T
        da_r = d_rh * hd * r * (1.0 - r)
        da_z = g * (c - hd) * z * (1.0 - z)
        dx = da_z @ Wz.T + da_r @ Wr.T + da_h @ Wh.T
        dh = g * (1.0 - z) + d_rh * r + da_z @ Uz.T + da_r @ Ur.T
        return (
            dx,
            dh,
            xd.T @ da_z,
            xd.T @ da_r,
            xd.T @ da_h,
            hd.T @ da_z,
            hd.T @ da_r,
            rh.T @ da_h,
            da_z.sum(axis=0),
            da_r.sum(axis=0),
            da_h.sum(axis=0),
        )

    return _record(out, (x, h) + weights, bw)
