"""Finite-difference oracle for reverse-mode gradients.

Central differences in 64-bit precision, compared element by element
against the analytic gradients a backward pass produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np



class GradCheckError(RuntimeError):
    """A non-finite value appeared while probing a parameter."""


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    per_param: dict = field(default_factory=dict)

    def __float__(self):
        return self.max_rel_error


def randomize_parameters(params, rng, low: float = -0.5, high: float = 0.5):
    """Move every parameter to a generic position before a gradient check.

    Zero-initialized biases sit exactly on the ReLU kink, where the
    subgradient convention and a central difference legitimately disagree.
    """
    for p in params:
        p.value.data = rng.derive("randomize", p.name).uniform(low, high, p.value.shape).astype(
            p.value.dtype
        )


def grad_check(
    fn, params, h: float = 1e-5, sample: int | None = None, rng=None, denom_floor: float = 1e-12
) -> GradCheckResult:
    """Compare analytic gradients of scalar `fn()` against central differences.

    fn must be deterministic and close over `params` (a Parameter iterable,
    64-bit values). Every element is probed unless `sample` limits the count
    per parameter (seeded by `rng`); relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, denom_floor).

    Compositions with a softmax gate have parameters whose true gradient is
    exactly zero by shift invariance (e.g. a bias added to every gate score);
    there the central difference returns pure roundoff (~eps*|f|/2h) and no
    finite threshold can attest agreement against a 1e-12 floor. Such checks
    should pass a `denom_floor` above the roundoff scale (1e-6 works at
    h=1e-4), which still flags any real defect.
    """
    params = list(params)
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-7, 1e-4]")
    for p in params:
        if p.value.dtype != np.float64:
            raise ValueError(f"grad_check requires 64-bit parameters, {p.name} is {p.value.dtype}")
        p.zero_grad()

    out = fn()
    if not np.isfinite(out.data).all():
        raise GradCheckError("non-finite forward output before probing")
    out.backward()
    analytic = {p.name: p.grad.copy() for p in params}

    worst = 0.0
    worst_param = ""
    per_param = {}

    def eval_scalar():
        value = fn().item()
        return value

    for p in params:
        flat = p.value.data.reshape(-1)
        n = flat.size
        if sample is not None and sample < n:
            if rng is None:
                raise ValueError("sampled grad_check needs an rng")
            indices = rng.derive("gradcheck", p.name).choice_without_replacement(n, sample)
            indices = np.sort(indices)
        else:
            indices = range(n)
        a_flat = analytic[p.name].reshape(-1)
        p_worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_scalar()
            flat[i] = orig - h
            f_minus = eval_scalar()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"non-finite value while probing {p.name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), denom_floor)
            if rel > p_worst:
                p_worst = rel
        per_param[p.name] = p_worst
        if p_worst > worst:
            worst = p_worst
            worst_param = p.name
    return GradCheckResult(worst, worst_param, per_param)
