"""Adam with the transformer warmup schedule."""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tape import Tensor


class DivergedError(RuntimeError):
    """Raised when a gradient goes non-finite; carries the parameter name."""


class Adam:
    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
    ):
        named = [p.name or f"param{i}" for i, p in enumerate(params)]
        if len(set(named)) != len(named):
            raise ValueError("duplicate parameter names")
        self.params = list(params)
        self.names = named
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        self.step_count += 1
        lr = self.lr if lr is None else lr
        for p, name, m, v in zip(self.params, self.names, self.m, self.v):
            if p.grad is None:
                continue
            g = np.asarray(p.grad, dtype=p.data.dtype)
            if not np.isfinite(g).all():
                raise DivergedError(f"non-finite gradient in {name}")
            kernels.adam_update(
                p.data, g, m, v, lr, self.beta1, self.beta2, self.eps, self.step_count
            )

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {n: m for n, m in zip(self.names, self.m)},
            "v": {n: v for n, v in zip(self.names, self.v)},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for i, n in enumerate(self.names):
            self.m[i][...] = state["m"][n]
            self.v[i][...] = state["v"][n]


def warmup_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp to base_lr over warmup_steps, constant afterwards.
    step is 1-based."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)
