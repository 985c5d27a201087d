"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, frozen=(),
              lr_scale=None):
    """Apply one Adam update in place.

    ``params`` and ``grads`` map names to arrays (or tensors). Names in
    ``frozen`` and names without a gradient are left untouched. ``lr_scale``
    optionally multiplies the step size of named parameters. Returns
    ``(params, state)`` for convenience.
    """
    lr_scale = lr_scale or {}
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads.get(name)
        if g is None:
            continue
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = np.asarray(g)
        if g.shape != arr.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name!r} {arr.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(arr)
            v = np.zeros_like(arr)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m.astype(arr.dtype, copy=False)
        state.v[name] = v.astype(arr.dtype, copy=False)
        update = lr * lr_scale.get(name, 1.0) * (m / c1) / (np.sqrt(v / c2) + eps)
        arr -= update.astype(arr.dtype, copy=False)
    return params, state


class Adam:
    """Stateful wrapper over :func:`adam_step` for a dict of tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, frozen=(), lr_scale=None):
        self.params = params
        self.lr_scale = dict(lr_scale or {})
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.frozen = set(frozen)
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2,
                  self.eps, self.frozen, self.lr_scale)
