"""Differentiable primitives.

Reductions along the sequence axis (softmax normaliser, attention mixing)
accumulate strictly left to right and row-wise projections are evaluated
one row at a time, so a position's value never depends on how many
positions follow it. Masked future steps therefore leave earlier outputs
bit-identical, not merely close.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), back)


def linear(x, w, b=None) -> Tensor:
    """``x @ w (+ b)`` over the last axis of ``x``; ``w`` has shape (d_in, d_out)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear: input {x.shape} does not match weight {w.shape}")
    out = (x.data[..., None, :] @ w.data)[..., 0, :]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = out + b.data
        parents.append(b)

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, w.shape[0]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_node(out, parents, back)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return make_node(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make_node(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


def _ordered_sum(a: np.ndarray, axis: int) -> np.ndarray:
    # left-to-right accumulation: appended zeros cannot change the result
    return np.take(np.cumsum(a, axis=axis), [-1], axis=axis)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / _ordered_sum(e, axis)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_node(y, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(_ordered_sum(np.exp(z), axis))
    y = z - lse

    def back(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return make_node(y, (x,), back)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean, unit variance (no affine part)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return make_node(xhat, (x,), back)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(y, (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    y = np.mean(x.data, axis=axis, keepdims=keepdims)
    n = x.data.size // (y.size or 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return make_node(y, (x,), back)


def max(x, axis: int = -1, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient flows to the first maximal entry."""
    x = as_tensor(x)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    y = np.take_along_axis(x.data, idx, axis=axis)
    if not keepdims:
        y = np.squeeze(y, axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        out = np.zeros_like(x.data)
        np.put_along_axis(out, idx, g, axis=axis)
        return (out,)

    return make_node(y, (x,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(y, tensors, back)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"stack: shapes differ {[t.shape for t in tensors]}")
    y = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(y, tensors, back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return make_node(y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return make_node(x.data[index], (x,), back)


def embedding(table, index) -> Tensor:
    """Rows of ``table`` (V, d) selected by integer ``index`` of any shape."""
    table = as_tensor(table)
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range for vocabulary of size {table.shape[0]}")

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index, g)
        return (out,)

    return make_node(table.data[index], (table,), back)


def masked_fill(x, mask: np.ndarray, value: float) -> Tensor:
    x = as_tensor(x)
    mask = np.broadcast_to(mask, x.shape)
    return make_node(np.where(mask, value, x.data), (x,), lambda g: (np.where(mask, 0.0, g),))


def causal_mask_fill(scores, value: float = -np.inf) -> Tensor:
    """Fill entries where key index > query index over the last two axes."""
    n = scores.shape[-1]
    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    return masked_fill(scores, future, value)


def attention_scores(q, k) -> Tensor:
    """``q @ k^T`` over the last two axes: (..., T, d) x (..., S, d) -> (..., T, S)."""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"attention_scores: query {q.shape} and key {k.shape} head sizes differ")
    y = np.einsum("...td,...sd->...ts", q.data, k.data)

    def back(g):
        gq = np.einsum("...ts,...sd->...td", g, k.data)
        gk = np.einsum("...ts,...td->...sd", g, q.data)
        return _unbroadcast(gq, q.shape), _unbroadcast(gk, k.shape)

    return make_node(y, (q, k), back)


def attend(weights, v) -> Tensor:
    """Weighted sum of values, (..., T, S) x (..., S, d) -> (..., T, d).

    Accumulates over S in index order so trailing zero weights are exact no-ops.
    """
    weights, v = as_tensor(weights), as_tensor(v)
    if weights.shape[-1] != v.shape[-2]:
        raise ValueError(f"attend: weights {weights.shape} and values {v.shape} are not aligned")
    w, vd = weights.data, v.data
    out_shape = np.broadcast_shapes(w.shape[:-1], vd.shape[:-2] + (1,))[:-1] + (w.shape[-2], vd.shape[-1])
    out = np.zeros(out_shape)
    for s in range(w.shape[-1]):
        out += w[..., :, s, None] * vd[..., None, s, :]

    def back(g):
        gw = np.einsum("...td,...sd->...ts", g, vd)
        gv = np.einsum("...ts,...td->...sd", w, g)
        return _unbroadcast(gw, w.shape), _unbroadcast(gv, vd.shape)

    return make_node(out, (weights, v), back)
