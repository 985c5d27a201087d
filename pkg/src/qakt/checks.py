"""Finite-difference gradient checks and the causal no-leakage check."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import DistanceCache, decayed_softmax
from .config import RunConfig
from .data import Batch
from .model import QAKTModel


def tiny_model_batch(seed=0, n_students=2, length=8):
    """Float64, dropout-free model (D=8, N=3, M=6) and a random full batch."""
    cfg = RunConfig(n_skills=3, n_questions=6, dim=8, n_heads=8, slice_length=length,
                    precision="float64", exercise_dropout=0.0, prediction_dropout=0.0, seed=seed)
    model = QAKTModel(cfg)
    rng = np.random.default_rng(seed)
    batch = Batch(rng.integers(1, cfg.n_questions + 1, size=(n_students, length)),
                  rng.integers(0, 2, size=(n_students, length)),
                  np.ones((n_students, length), dtype=bool))
    return model, batch


def full_loss_gradcheck(seed=0, tolerance=1e-3, step=1e-3, max_per_tensor=100, beta=1.0, lam=1e-5):
    """Gradient check of the phase-1 loss over every model parameter.

    The context distance is held constant (as in backward) by replaying the
    distances recorded on the first forward pass.
    """
    model, batch = tiny_model_batch(seed)
    cache = DistanceCache()
    model.loss(batch, beta, lam, cache=cache)
    cache.replay = True

    def f():
        return model.loss(batch, beta, lam, cache=cache).total

    return ad.grad_check(f, model.params, step=step, tolerance=tolerance,
                         max_per_tensor=max_per_tensor, seed=seed)


def _leaf(rng, shape, low=None, high=None):
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return ad.Tensor(data, requires_grad=True)


def op_gradchecks(seed=0, tolerance=1e-4):
    """One gradient-check report per primitive op, on random float64 inputs."""
    rng = np.random.default_rng(seed)
    mask4 = np.tril(np.ones((4, 4), bool))
    strict4 = np.tril(np.ones((4, 4), bool), k=-1)
    cases = {}

    a, b = _leaf(rng, (3, 3)), _leaf(rng, (3, 3))
    cases["matmul"] = (lambda: ad.matmul(a, b).sum(), {"a": a, "b": b})
    x = _leaf(rng, (8,))
    cases["sigmoid"] = (lambda: ad.sigmoid(x).sum(), {"x": x})
    xr = ad.Tensor(rng.choice([-1, 1], 8) * rng.uniform(0.1, 1.0, 8), requires_grad=True)
    cases["relu"] = (lambda: (ad.relu(xr) * ad.relu(xr)).sum(), {"x": xr})
    xe = _leaf(rng, (6,))
    cases["exp"] = (lambda: ad.exp(xe).sum(), {"x": xe})
    xl = _leaf(rng, (6,), 0.5, 2.0)
    cases["log"] = (lambda: ad.log(xl).sum(), {"x": xl})
    n, d = _leaf(rng, (5,)), _leaf(rng, (5,), 0.5, 2.0)
    cases["div"] = (lambda: ad.div(n, d).sum(), {"n": n, "d": d})
    xa = ad.Tensor(rng.choice([-1, 1], 6) * rng.uniform(0.1, 1.0, 6), requires_grad=True)
    cases["abs"] = (lambda: (ad.abs_(xa) * xa).sum(), {"x": xa})
    s, w4 = _leaf(rng, (4, 4)), rng.normal(size=(4, 4))
    cases["softmax_masked"] = (lambda: (ad.softmax_masked(s, mask4) * w4).sum(), {"s": s})
    s2 = _leaf(rng, (4, 4))
    cases["softmax_masked_strict"] = (
        lambda: (ad.softmax_masked(s2, strict4, allow_empty=True) * w4).sum(), {"s": s2})
    xn, g, bias = _leaf(rng, (3, 6)), _leaf(rng, (6,)), _leaf(rng, (6,))
    w36 = rng.normal(size=(3, 6))
    cases["layer_norm"] = (lambda: (ad.layer_norm(xn, g, bias) * w36).sum(),
                           {"x": xn, "gain": g, "bias": bias})
    table = _leaf(rng, (5, 3))
    idx = np.array([[0, 2, 2], [4, 1, 0]])
    cases["take"] = (lambda: (ad.take(table, idx, axis=0) * ad.take(table, idx, axis=0)).sum(),
                     {"table": table})
    c1, c2 = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
    w25 = rng.normal(size=(2, 5))
    cases["concat"] = (lambda: (ad.concat([c1, c2], axis=1) * w25).sum(), {"a": c1, "b": c2})
    p = _leaf(rng, (2, 4), 0.1, 0.9)
    y = rng.integers(0, 2, (2, 4))
    m = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], bool)
    cases["binary_cross_entropy"] = (lambda: ad.binary_cross_entropy(p, y, m), {"p": p})
    sc, th = _leaf(rng, (2, 2, 5, 5)), _leaf(rng, (2,), 0.05, 0.5)
    w5 = rng.normal(size=(2, 2, 5, 5))
    dist = {}

    def decayed():
        out, d = decayed_softmax(sc, th, False, dist.get("d"))
        dist.setdefault("d", d)
        return (out * w5).sum()

    decayed()
    cases["decayed_softmax"] = (decayed, {"scores": sc, "theta": th})

    return {name: ad.grad_check(f, params, tolerance=tolerance, seed=seed)
            for name, (f, params) in cases.items()}


def leakage_trials(model, sequences, n_trials=100, seed=0):
    """Perturb inputs that position ``t`` must not see and compare predictions bitwise.

    Even trials rewrite every interaction after ``t``; odd trials (and trials
    with ``t`` at the last position) flip the response at ``t``. Returns the
    list of ``(trial, t)`` pairs whose predictions up to ``t`` changed.
    """
    rng = np.random.default_rng(seed)
    m = model.config.n_questions
    failures = []
    for trial in range(n_trials):
        s = sequences[rng.integers(len(sequences))]
        length = s.length
        t = int(rng.integers(length))
        q, r = s.questions.copy(), s.responses.copy()
        base = model.predict(Batch(q[None], r[None], s.mask[None]))[0]
        if trial % 2 == 0 and t < length - 1:
            q[t + 1:length] = rng.integers(1, m + 1, length - t - 1)
            r[t + 1:length] = rng.integers(0, 2, length - t - 1)
        else:
            r[t] = 1 - r[t]
        alt = model.predict(Batch(q[None], r[None], s.mask[None]))[0]
        if not np.array_equal(base[: t + 1], alt[: t + 1]):
            failures.append((trial, t))
    return failures
