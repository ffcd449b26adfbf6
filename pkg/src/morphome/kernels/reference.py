"""Numpy implementations of the hot training kernels.

These are the semantics of record: the compiled backend in _core.pyx must
match them to float tolerance (see tests/test_kernels.py). All row-wise ops
act over the last axis and accept float32 or float64 arrays of any shape;
adam_update mutates its param/m/v buffers in place.
"""

from __future__ import annotations

import numpy as np


def softmax_forward(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # dx_i = y_i * (dy_i - sum_j y_j dy_j)
    s = np.sum(y * dy, axis=-1, keepdims=True)
    return y * (dy - s)


def layernorm_forward(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (y, mean, rstd); mean/rstd have the last axis reduced."""
    mean = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gamma + beta
    return y, mean[..., 0], rstd[..., 0]


def layernorm_backward(
    x: np.ndarray,
    gamma: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
    dy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dgamma, dbeta). mean/rstd are the saved forward stats."""
    d = x.shape[-1]
    xhat = (x - mean[..., None]) * rstd[..., None]
    dgamma = np.sum(dy * xhat, axis=tuple(range(x.ndim - 1)))
    dbeta = np.sum(dy, axis=tuple(range(x.ndim - 1)))
    dxhat = dy * gamma
    dx = rstd[..., None] * (
        dxhat
        - np.mean(dxhat, axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    # The var+eps term makes rstd slightly biased; the formula above is the
    # exact gradient of the forward as written (eps inside the sqrt).
    del d
    return dx, dgamma, dbeta


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, 0)


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    step: int,
) -> None:
    """One bias-corrected Adam step, in place on param/m/v. step is 1-based."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
