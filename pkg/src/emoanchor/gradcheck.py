"""Central finite-difference verification of tape gradients.

Graphs are re-executed in double precision (check mode): single-precision
rounding would drown the h^2 truncation error of the central difference.
A gradient entry passes when |analytic - numeric| <= atol + rtol * |numeric|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class CheckResult:
    name: str
    max_abs_err: float
    max_rel_err: float
    passed: bool

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name}: max_rel_err={self.max_rel_err:.3e} [{status}]"


def fd_check(
    fn: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    h: float = 1e-4,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    name: str = "op",
) -> CheckResult:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` receives one float64 requires_grad Tensor per input array and must
    return a scalar Tensor, rebuilding its graph on every call (it is invoked
    once per perturbed coordinate).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    def run(values: Sequence[np.ndarray], want_grads: bool):
        if not want_grads:  # plain evaluation, no tape
            loss = fn(*[Tensor(v, dtype=np.float64) for v in values])
            return float(loss.data)
        tensors = [Tensor(v, requires_grad=True, dtype=np.float64) for v in values]
        with Tape() as tape:
            loss = fn(*tensors)
        if loss.data.size != 1:
            raise ValueError(f"fd_check target {name!r} did not return a scalar")
        tape.backward(loss)
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    analytic = run(arrays, want_grads=True)

    max_abs = 0.0
    max_rel = 0.0
    ok = True
    for i, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = run(arrays, want_grads=False)
            flat[j] = orig - h
            down = run(arrays, want_grads=False)
            flat[j] = orig
            num_flat[j] = (up - down) / (2.0 * h)
        diff = np.abs(analytic[i] - numeric)
        max_abs = max(max_abs, float(diff.max(initial=0.0)))
        rel = diff / np.maximum(np.abs(numeric), 1.0)
        max_rel = max(max_rel, float(rel.max(initial=0.0)))
        if not (diff <= atol + rtol * np.abs(numeric)).all():
            ok = False
    return CheckResult(name=name, max_abs_err=max_abs, max_rel_err=max_rel, passed=ok)
