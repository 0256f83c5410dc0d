"""Central finite-difference audit of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn import ParameterSet
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    tol: float
    per_tensor: dict = field(default_factory=dict)  # name -> max relative error
    analytic: dict = field(default_factory=dict)  # name -> gradient used for the comparison

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self) -> tuple:
        if not self.per_tensor:
            return ("", 0.0)
        return max(self.per_tensor.items(), key=lambda kv: kv[1])


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """|a - n| / max(|a|, |n|, floor).

    For entries whose true gradient is zero the central difference returns pure
    rounding noise (around 1e-9 here), so the floor turns the test into an
    absolute one of ``tol * floor`` on those entries.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    model_fn: Callable[[], Tensor],
    params: ParameterSet,
    tol: float = 1e-4,
    eps: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop gradients of a scalar ``model_fn()`` with central differences.

    ``model_fn`` must be deterministic and smooth at the probe point (dropout
    off). Tensors larger than ``max_entries`` are audited on a seeded sample of
    entries. Frozen tensors are reported with an all-zero gradient and are not
    perturbed.
    """
    params.zero_grad()
    loss = model_fn()
    value = float(np.asarray(loss.data).reshape(()))
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss at the probe point: {value}")
    loss.backward()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        grad = params.gradient(name).copy()
        report.analytic[name] = grad
        if not p.requires_grad:
            continue
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            idx = np.arange(flat.size)
        worst = 0.0
        gflat = grad.reshape(-1)
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                up = float(np.asarray(model_fn().data).reshape(()))
                flat[i] = orig - eps
                down = float(np.asarray(model_fn().data).reshape(()))
            flat[i] = orig
            worst = max(worst, relative_error(gflat[i], (up - down) / (2 * eps), floor))
        report.per_tensor[name] = worst
    params.zero_grad()
    return report
