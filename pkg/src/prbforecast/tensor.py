"""Minimal dense tensor library with reverse-mode autodiff.

Tensors wrap numpy arrays (float32 by default; float64 is allowed so test
oracles can run at higher precision). Differentiable ops record a backward
closure on a global tape; `backward()` replays the tape in reverse and then
clears it, so a second backward without a fresh forward pass is an error.

Only the broadcasting the model needs is supported: equal shapes, scalars,
and a trailing-dimension bias vector. Keeps every backward rule auditable.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class AutodiffError(RuntimeError):
    pass


# Single run-level RNG: dropout and parameter init both draw from it, so a
# run is fully determined by (data, config, seed).
_rng = np.random.default_rng(0)


def seed_all(seed: int) -> None:
    global _rng
    _rng = np.random.default_rng(seed)


def get_rng() -> np.random.Generator:
    return _rng


class Tape:
    """Ordered record of differentiable ops; inputs always precede outputs."""

    def __init__(self):
        self._ops = []  # list of (out_tensor, backward_fn)

    def record(self, out, backward_fn):
        self._ops.append((out, backward_fn))

    def __len__(self):
        return len(self._ops)

    def clear(self):
        self._ops.clear()


_tape = Tape()
_grad_enabled = True


def tape() -> Tape:
    return _tape


class no_grad:
    """Context manager that suspends tape recording (inference forwards)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.astype(t.data.dtype, copy=False)


def _result(data, inputs, backward_fn) -> Tensor:
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, dtype=data.dtype)
    if track:
        _tape.record(out, backward_fn)
    return out


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient `g` down to `shape` (undo scalar/bias/batch broadcast)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_addable(a_shape, b_shape):
    if a_shape == b_shape:
        return
    if int(np.prod(b_shape)) == 1 or int(np.prod(a_shape)) == 1:
        return
    # trailing-dimension bias
    if len(b_shape) == 1 and a_shape and a_shape[-1] == b_shape[0]:
        return
    if len(a_shape) == 1 and b_shape and b_shape[-1] == a_shape[0]:
        return
    raise ShapeError(f"cannot add shapes {a_shape} and {b_shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_addable(a.shape, b.shape)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _result(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_addable(a.shape, b.shape)
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_addable(a.shape, b.shape)
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _result(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * a.data.dtype.type(s)

    def backward(g):
        _accumulate(a, g * s)

    return _result(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        da = np.matmul(g, np.swapaxes(b.data, -1, -2))
        db = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _reduce_to(da, a.shape))
        _accumulate(b, _reduce_to(db, b.shape))

    return _result(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    return _result(data, (a,), backward)


def dropout(a: Tensor, p: float, training: bool) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (_rng.random(a.shape) >= p).astype(a.data.dtype) / a.data.dtype.type(1.0 - p)
    data = a.data * keep

    def backward(g):
        _accumulate(a, g * keep)

    return _result(data, (a,), backward)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise IndexError(f"embedding index {bad} out of range for table with {rows} rows")
    data = table.data[idx]

    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx.reshape(-1),
                  g.reshape(-1, table.shape[-1]).astype(table.data.dtype, copy=False))

    return _result(data, (table,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for t, piece in zip(tensors, pieces):
            _accumulate(t, piece)

    return _result(data, tuple(tensors), backward)


def slice_lastdim(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[..., start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accumulate(a, full)

    return _result(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    data = a.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _result(data, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _result(data, (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.data.dtype)

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _result(data, (a,), backward)


def softmax_lastdim(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, stabilized by max-subtraction.

    `mask` is an optional additive array (0 for visible, -inf for masked),
    broadcastable to `a.shape`. An all-masked row is a precondition violation.
    """
    if a.shape[-1] < 1:
        raise ShapeError("softmax needs a nonempty last dimension")
    x = a.data if mask is None else a.data + mask
    m = x.max(axis=-1, keepdims=True)
    if not np.isfinite(m).all():
        raise ValueError("softmax row is fully masked")
    e = np.exp(x - m)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - dot) * data)

    return _result(data, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over an empty last dimension")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},), "
                         f"got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    data = gain.data * xhat + bias.data

    def backward(g):
        dxhat = g * gain.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, dx)
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))

    return _result(data, (x, gain, bias), backward)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every reachable requires_grad tensor, then clear
    the tape. Gradients from fan-out are summed."""
    if loss.data.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if len(_tape) == 0:
        raise AutodiffError("tape is empty: run a forward pass before backward")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(_tape._ops):
        if out.grad is not None:
            fn(out.grad)
    _tape.clear()
