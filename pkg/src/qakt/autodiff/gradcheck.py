"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    per_param: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def to_text(self):
        lines = [
            f"checked: {self.n_checked}",
            f"max_rel_error: {self.max_rel_error:.3e}",
            f"tolerance: {self.tolerance:.1e}",
            f"status: {'PASS' if self.passed else 'FAIL'}",
        ]
        for name, err in self.per_param.items():
            lines.append(f"  {name}: {err:.3e}")
        for name, coord, ad, fd, err in self.failures[:20]:
            lines.append(f"  FAIL {name}{list(coord)} autodiff={ad:.6e} numeric={fd:.6e} rel={err:.3e}")
        return "\n".join(lines)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(f, params, step=1e-3, tolerance=1e-4, max_per_tensor=100, seed=0, floor=1e-6):
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` rebuilds the graph from ``params`` (a name -> Tensor mapping) and
    returns a scalar tensor; it must be deterministic. Tensors with more than
    ``max_per_tensor`` elements are sampled without replacement.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    f().backward()
    analytic = {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for n, p in params.items()}

    worst = 0.0
    n_checked = 0
    per_param = {}
    failures = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, max_per_tensor, replace=False))
        tensor_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().data)
            flat[i] = orig - step
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            ad = float(analytic[name].reshape(-1)[i])
            err = relative_error(ad, numeric, floor)
            tensor_worst = max(tensor_worst, err)
            n_checked += 1
            if err >= tolerance:
                failures.append((name, np.unravel_index(i, p.shape), ad, numeric, err))
        per_param[name] = tensor_worst
        worst = max(worst, tensor_worst)
    return GradCheckReport(worst, tolerance, n_checked, per_param, failures)
