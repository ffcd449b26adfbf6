"""Central-difference gradient verification.

Meant to run on small float64 models: truncation error is O(h^2) and
round-off O(machine_eps / h), so h = 1e-5 puts both far below the 1e-5
relative-error gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tape import Tensor


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    n_checked: int
    failures: list[tuple[str, int, float, float, float]]  # name, idx, analytic, numeric, rel

    @property
    def ok(self) -> bool:
        return not self.failures


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def check_gradients(
    loss_fn,
    params: list[Tensor],
    h: float = 1e-5,
    tol: float = 1e-5,
    atol: float = 1e-9,
    max_coords_per_param: int = 20,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn rebuilds the graph on every call (it is invoked 2 per coordinate
    plus once for the analytic pass). Coordinates are sampled per parameter.
    A coordinate whose analytic/numeric difference is below atol counts as
    matching outright: where the true derivative is exactly zero (e.g. a
    bias that cancels inside a softmax) the central difference is pure
    round-off, of order machine_eps/h, and no relative measure is
    meaningful there.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"grad check requires float64 params, {p.name} is {p.data.dtype}")
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for p in params}

    rng = np.random.default_rng(seed)
    failures = []
    worst = (0.0, "")
    n_checked = 0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        idxs = (
            np.arange(n)
            if n <= max_coords_per_param
            else rng.choice(n, size=max_coords_per_param, replace=False)
        )
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = float(analytic[p.name].reshape(-1)[i])
            r = 0.0 if abs(a - numeric) <= atol else rel_err(a, numeric)
            n_checked += 1
            if r > worst[0]:
                worst = (r, p.name or "?")
            if r > tol:
                failures.append((p.name or "?", int(i), a, numeric, r))
    return GradCheckResult(
        max_rel_err=worst[0], worst_param=worst[1], n_checked=n_checked, failures=failures
    )
