"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class NondeterministicFunction(RuntimeError):
    pass


@dataclass
class GradReport:
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)
    worst_index: tuple | None = None

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def check_gradients(
    f: Callable[..., Tensor],
    inputs: Sequence,
    eps: float = 1e-5,
) -> GradReport:
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    The relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``f`` must build a fresh graph on every call and must be deterministic.
    """
    base = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]

    def evaluate(arrays, track=False):
        tensors = [Tensor(a.copy(), requires_grad=track) for a in arrays]
        out = f(*tensors)
        if out.size != 1:
            raise ValueError("check_gradients needs a scalar-valued function")
        return out, tensors

    first, _ = evaluate(base)
    second, _ = evaluate(base)
    if first.item() != second.item():
        raise NondeterministicFunction(
            f"f differs between probes: {first.item()!r} vs {second.item()!r}"
        )

    out, tensors = evaluate(base, track=True)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    per_input = []
    worst = 0.0
    worst_index = None
    for k, arr in enumerate(base):
        err_k = 0.0
        for idx in np.ndindex(arr.shape):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            numeric = (evaluate(plus)[0].item() - evaluate(minus)[0].item()) / (2 * eps)
            a = float(analytic[k][idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if rel > err_k:
                err_k = rel
            if rel > worst:
                worst, worst_index = rel, (k, idx)
        per_input.append(err_k)
    return GradReport(worst, per_input, worst_index)
