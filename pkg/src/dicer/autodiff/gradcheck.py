"""Central finite-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape

MAX_COORDS = 10_000


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    coords_checked: int
    passed: bool


@dataclass
class GradCheckReport:
    checks: list = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def lines(self):
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            yield f"{status} {c.name:<28} max_rel_err={c.max_rel_error:.3e} coords={c.coords_checked}"


def relative_error(analytic, numeric, floor=1e-8):
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(loss_fn, params, h=1e-5, tol=1e-4, seed=0, floor=1e-8):
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` takes no arguments, reads the current values of ``params``
    and returns a scalar Tensor; it must be deterministic (dropout off).
    ``params`` maps names to leaf tensors. Above ``MAX_COORDS`` coordinates
    per tensor a seeded random subsample is checked.
    """
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        analytic = grads.get(p, np.zeros_like(p.data))
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > MAX_COORDS:
            coords = np.sort(rng.choice(flat.size, MAX_COORDS, replace=False))
        numeric = np.empty(len(coords))
        for k, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            up = float(loss_fn().data)
            flat[c] = orig - h
            down = float(loss_fn().data)
            flat[c] = orig
            numeric[k] = (up - down) / (2.0 * h)
        err = relative_error(analytic.reshape(-1)[coords], numeric, floor)
        worst = float(err.max()) if err.size else 0.0
        report.checks.append(ParamCheck(name, worst, len(coords), worst < tol))
    return report
