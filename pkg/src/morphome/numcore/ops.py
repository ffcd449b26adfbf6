"""Differentiable ops. Forward math delegates the row-wise hot spots to
morphome.kernels (compiled when available); matmul stays on BLAS."""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tape import Tensor, make_node


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate(_unbroadcast(dy, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(dy, b.data.shape))

    return make_node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate(_unbroadcast(dy * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(dy * a.data, b.data.shape))

    return make_node(out_data, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    out_data = x.data * c

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy * c)

    return make_node(out_data, (x,), backward)


def matmul(a, b) -> Tensor:
    """a @ b where either b is a 2-D weight or both share leading batch
    dims (the two cases the model needs)."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate(dy @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.data.ndim == 2:
                a2 = a.data.reshape(-1, a.data.shape[-1])
                dy2 = dy.reshape(-1, dy.shape[-1])
                b.accumulate(a2.T @ dy2)
            else:
                b.accumulate(np.swapaxes(a.data, -1, -2) @ dy)

    return make_node(out_data, (a, b), backward)


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return add(out, bias) if bias is not None else out


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy.reshape(x.data.shape))

    return make_node(out_data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    out_data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(np.transpose(dy, inv))

    return make_node(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = kernels.relu_forward(x.data)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(kernels.relu_backward(x.data, dy))

    return make_node(out_data, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = kernels.softmax_forward(x.data)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(kernels.softmax_backward(y, dy))

    return make_node(y, (x,), backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    y, mean, rstd = kernels.layernorm_forward(x.data, gamma.data, beta.data, eps)

    def backward(dy):
        dx, dgamma, dbeta = kernels.layernorm_backward(
            x.data, gamma.data, mean, rstd, dy
        )
        if x.requires_grad:
            x.accumulate(dx)
        if gamma.requires_grad:
            gamma.accumulate(dgamma)
        if beta.requires_grad:
            beta.accumulate(dbeta)

    return make_node(y, (x, gamma, beta), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def backward(dy):
        if table.requires_grad:
            dtable = np.zeros_like(table.data)
            np.add.at(dtable, ids.reshape(-1), dy.reshape(-1, dy.shape[-1]))
            table.accumulate(dtable)

    return make_node(out_data, (table,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    if not train or p <= 0.0:
        return x
    x = as_tensor(x)
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale_ = 1.0 / (1.0 - p)
    out_data = x.data * keep * scale_

    def backward(dy):
        if x.requires_grad:
            x.accumulate(dy * keep * scale_)

    return make_node(out_data, (x,), backward)


def add_const(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-trainable array (positional encodings, attention masks)."""
    x = as_tensor(x)
    out_data = x.data + c

    def backward(dy):
        if x.requires_grad:
            x.accumulate(_unbroadcast(dy, x.data.shape))

    return make_node(out_data, (x,), backward)


def mul_const(x: Tensor, c: np.ndarray) -> Tensor:
    x = as_tensor(x)
    out_data = x.data * c

    def backward(dy):
        if x.requires_grad:
            x.accumulate(_unbroadcast(dy * c, x.data.shape))

    return make_node(out_data, (x,), backward)


def total(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out_data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(dy):
        if x.requires_grad:
            x.accumulate(np.broadcast_to(dy, x.data.shape))

    return make_node(out_data, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return scale(total(x), 1.0 / n)


def label_smoothed_ce(
    logits: Tensor,
    targets: np.ndarray,
    mask: np.ndarray,
    smoothing: float = 0.1,
) -> Tensor:
    """Mean label-smoothed cross entropy over unmasked rows.

    Class 0 is padding: it stays inside the softmax but gets no smoothing
    mass, so the target distribution is (1 - eps) on the gold class plus
    eps spread uniformly over the remaining K - 1 real classes (gold
    included), and sums to one.
    """
    logits = as_tensor(logits)
    z = logits.data
    n, k = z.shape[-2], z.shape[-1]
    z2 = z.reshape(-1, k)
    t = np.asarray(targets).reshape(-1)
    m = np.asarray(mask, dtype=z.dtype).reshape(-1)
    n_rows = z2.shape[0]
    denom = m.sum()
    if denom <= 0:
        raise ValueError("loss mask selects no rows")
    if (t[m > 0] == 0).any():
        raise ValueError("gold target is the padding class on an unmasked row")

    eps = smoothing
    support = k - 1
    p = kernels.softmax_forward(z2)
    rows = np.arange(n_rows)
    lse = np.log(np.sum(np.exp(z2 - z2.max(axis=-1, keepdims=True)), axis=-1)) + z2.max(
        axis=-1
    )
    loss_rows = lse - (1 - eps) * z2[rows, t] - (eps / support) * (z2[:, 1:].sum(axis=-1))
    loss = float((loss_rows * m).sum() / denom)

    def backward(dy):
        if not logits.requires_grad:
            return
        q = np.zeros_like(z2)
        q[:, 1:] = eps / support
        q[rows, t] += 1 - eps
        g = (p - q) * (m / denom)[:, None] * dy
        logits.accumulate(g.reshape(z.shape))

    del n
    return make_node(np.asarray(loss, dtype=z.dtype), (logits,), backward)
