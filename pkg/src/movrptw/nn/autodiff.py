"""Minimal dense-tensor engine with reverse-mode differentiation.

Exactly the operations the policy network needs: fused linear layers, batched
matmul, attention-shaped reshapes/gathers, masked softmax and batch norm.
Values are numpy arrays (float32 by default; float64 for gradient checking).
Ops record onto the active Tape in forward order, so walking the tape in
reverse is a valid reverse-topological sweep.
"""

import numpy as np


class MaskError(ValueError):
    """Every vertex is masked; the caller must detect terminal states first."""


class Tensor:
    """A value in the computation graph; grad is populated by Tape.backward."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


_TAPES: list = []


class Tape:
    """Recorded operation graph for one forward pass."""

    def __init__(self):
        self._nodes = []  # (output tensor, backward closure), forward order

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, root: Tensor, seed=None):
        """Accumulate gradients of `root` w.r.t. every recorded input."""
        if seed is None:
            seed = np.ones_like(root.data)
        root.grad = np.asarray(seed, dtype=root.data.dtype)
        for out, back in reversed(self._nodes):
            if out.grad is not None:
                back(out.grad)

    def __len__(self):
        return len(self._nodes)


def _tape():
    return _TAPES[-1] if _TAPES else None


def _record(out, back):
    t = _tape()
    if t is not None:
        t._nodes.append((out, back))


def _acc(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
        if t.grad.shape != t.data.shape:  # broadcast leftovers
            t.grad = np.broadcast_to(t.grad, t.data.shape).copy()
    else:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def back(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))
    _record(out, back)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; `b` may be a constant ndarray (no gradient)."""
    if isinstance(b, Tensor):
        out = Tensor(a.data * b.data)

        def back(g):
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
            _acc(b, _unbroadcast(g * a.data, b.data.shape))
    else:
        b = np.asarray(b, dtype=a.data.dtype)
        out = Tensor(a.data * b)

        def back(g):
            _acc(a, _unbroadcast(g * b, a.data.shape))
    _record(out, back)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(s))

    def back(g):
        _acc(a, g * a.data.dtype.type(s))
    _record(out, back)
    return out


def add_const(a: Tensor, c) -> Tensor:
    out = Tensor(a.data + np.asarray(c, dtype=a.data.dtype))

    def back(g):
        _acc(a, _unbroadcast(g, a.data.shape))
    _record(out, back)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics (batched for >2-D operands)."""
    out = Tensor(a.data @ b.data)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _acc(a, _unbroadcast(ga, a.data.shape))
        _acc(b, _unbroadcast(gb, b.data.shape))
    _record(out, back)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W^T + b with weight stored (out_features, in_features)."""
    if x.data.shape[-1] != w.data.shape[-1]:
        raise ValueError(f"linear: input dim {x.data.shape[-1]} != weight in-dim {w.data.shape[-1]}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)

    def back(g):
        _acc(x, g @ w.data)
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.data.shape[-1])
        _acc(w, gw)
        if b is not None:
            _acc(b, g.reshape(-1, g.shape[-1]).sum(axis=0))
    _record(out, back)
    return out


def permute(a: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    inv = np.argsort(axes)

    def back(g):
        _acc(a, np.transpose(g, inv))
    _record(out, back)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def back(g):
        _acc(a, g.reshape(a.data.shape))
    _record(out, back)
    return out


def concat(parts, axis=-1) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _acc(p, piece)
    _record(out, back)
    return out


def gather_nodes(a: Tensor, idx) -> Tensor:
    """Select one node embedding per batch row: (B,N,D),(B,) -> (B,D)."""
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx])

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        _acc(a, ga)
    _record(out, back)
    return out


def gather_cols(a: Tensor, idx) -> Tensor:
    """Select one column per batch row: (B,N),(B,) -> (B,)."""
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, idx])

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        _acc(a, ga)
    _record(out, back)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))

    def back(g):
        _acc(a, g * (a.data > 0))
    _record(out, back)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def back(g):
        _acc(a, g * (1.0 - y * y))
    _record(out, back)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def back(g):
        _acc(a, g / a.data)
    _record(out, back)
    return out


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(g, a.data.shape).copy())
    _record(out, back)
    return out


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _acc(a, y * (g - dot))
    _record(out, back)
    return out


def masked_softmax(logits: Tensor, mask, big_negative: float = -999999.0) -> Tensor:
    """softmax(logits + O * mask) where mask entries of 1 exclude a vertex.

    Masked entries end up with probability < 1e-6 (exactly 0 after the exp
    underflows). Raises MaskError if a row masks every vertex.
    """
    mask = np.asarray(mask)
    if big_negative > -999999.0:
        raise ValueError("big_negative must be <= -999999 to dominate any logit")
    if mask.shape != logits.data.shape:
        raise ValueError(f"mask shape {mask.shape} != logits shape {logits.data.shape}")
    if not (~mask.astype(bool)).any(axis=-1).all():
        raise MaskError("all vertices masked")
    shifted = add_const(logits, mask.astype(logits.data.dtype) * logits.data.dtype.type(big_negative))
    return softmax(shifted, axis=-1)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
               mode: str = "train", momentum: float = 0.1, eps: float = 1e-5,
               update_stats: bool = True) -> Tensor:
    """Batch normalization over every axis but the last (feature) axis.

    Train mode normalizes with the combined batch*node statistics and, when
    update_stats is set, folds them into the running buffers (in place).
    Infer mode uses the running buffers and never mutates anything.
    """
    feat = x.data.shape[-1]
    pop_axes = tuple(range(x.data.ndim - 1))
    population = int(np.prod([x.data.shape[i] for i in pop_axes])) if pop_axes else 1
    if mode == "train":
        if population < 2:
            raise ValueError(f"batch_norm train mode needs population >= 2, got {population}")
        mu = x.data.mean(axis=pop_axes)
        var = x.data.var(axis=pop_axes)
        if update_stats:
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mu
            running_var *= (1.0 - momentum)
            running_var += momentum * var
    elif mode == "infer":
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = Tensor(xhat * gamma.data + beta.data)

    def back(g):
        _acc(beta, g.reshape(-1, feat).sum(axis=0))
        _acc(gamma, (g * xhat).reshape(-1, feat).sum(axis=0))
        gxhat = g * gamma.data
        if mode == "infer":
            _acc(x, gxhat * inv_std)
            return
        n = population
        sum_gxhat = gxhat.sum(axis=pop_axes)
        sum_gxhat_xhat = (gxhat * xhat).sum(axis=pop_axes)
        gx = (inv_std / n) * (n * gxhat - sum_gxhat - xhat * sum_gxhat_xhat)
        _acc(x, gx)
    _record(out, back)
    return out
