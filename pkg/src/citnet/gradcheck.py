"""Finite-difference gradient oracle.

The checker is deliberately independent of the autodiff machinery: it
re-evaluates the function under test with perturbed float64 inputs and
compares central differences against the recorded gradients. It is the
ground truth every differentiable primitive and composite operator is
verified against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError
from .tensor import Tensor


@dataclass
class GradReport:
    """Outcome of one finite-difference comparison."""

    max_rel_err: float
    per_input: list[float] = field(default_factory=list)
    checked_elements: int = 0

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def _rel_err(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1.0)
    return abs(analytic - numeric) / denom


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_elements_per_input: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradReport:
    """Compare autodiff gradients of scalar-valued ``f`` against central differences.

    Every input must be float64 and ``requires_grad=True``. When
    ``max_elements_per_input`` is set, a deterministic random subset of each
    input's elements is probed instead of all of them (needed for whole-model
    checks). Returns the max relative error over all probed elements.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise UsageError("grad_check requires float64 inputs")
        if not t.requires_grad:
            raise UsageError("grad_check inputs must have requires_grad=True")
        t.zero_grad()

    out = f(*inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise UsageError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)

    per_input: list[float] = []
    checked = 0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        n = flat.size
        if max_elements_per_input is not None and n > max_elements_per_input:
            positions = rng.choice(n, size=max_elements_per_input, replace=False)
        else:
            positions = np.arange(n)
        worst = 0.0
        for pos in positions:
            orig = flat[pos]
            flat[pos] = orig + h
            plus = f(*inputs).item()
            flat[pos] = orig - h
            minus = f(*inputs).item()
            flat[pos] = orig
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, _rel_err(float(ga_flat[pos]), numeric))
            checked += 1
        per_input.append(worst)

    return GradReport(max_rel_err=max(per_input) if per_input else 0.0,
                      per_input=per_input, checked_elements=checked)
