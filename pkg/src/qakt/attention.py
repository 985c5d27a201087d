"""Monotonic multi-head attention with context-aware exponential decay.

Sequences are laid out ``(batch, position, feature)``. Encoders let position
``t`` attend to ``tau <= t``; the knowledge retriever only to ``tau < t``, and
its first position, which has no admissible key, outputs zeros.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ShapeError

STAGES = ("qenc", "kenc", "kret")


class DistanceCache:
    """Records per-stage distance matrices so later passes can reuse them.

    With ``replay`` set, stored matrices are used instead of recomputing,
    which lets finite differences treat the distances as constants exactly
    as backward does.
    """

    def __init__(self):
        self.values = {}
        self.replay = False


def causal_mask(l, strict):
    return np.tril(np.ones((l, l), dtype=bool), k=-1 if strict else 0)


def context_distance(queries, keys, mask_mode="inclusive"):
    """Context-aware distance for arrays shaped ``(..., l, d_k)``; no gradient."""
    q = np.asarray(queries.data if isinstance(queries, ad.Tensor) else queries)
    k = np.asarray(keys.data if isinstance(keys, ad.Tensor) else keys)
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    return kernels.context_distance(scores, mask_mode == "strict")


def _distance_graph(scores, mask, strict):
    """Differentiable version of the distance for ``distance_grad`` mode."""
    l = scores.shape[-1]
    gamma = ad.softmax_masked(scores, mask, allow_empty=strict)
    after_tau = np.tril(np.ones((l, l), dtype=scores.dtype), k=-1)    # [t', tau] = t' > tau
    gap = np.abs(np.arange(l)[:, None] - np.arange(l)[None, :]).astype(scores.dtype)
    return ad.matmul(gamma, ad.Tensor(after_tau)) * ad.Tensor(gap * mask)


def decayed_softmax(scores, theta, strict, dist=None):
    """Causal softmax of ``exp(-theta_h * dist) * scores`` as one graph node.

    ``scores`` is ``(B, n_heads, l, l)`` and ``theta`` holds one positive
    rate per head. The distance is treated as a constant; it is computed from
    ``scores`` unless given. Returns ``(weights, dist)``.
    """
    w, d = kernels.monotonic_weights(scores.data, theta.data, strict, dist)

    def backward(g):
        return kernels.monotonic_weights_backward(g, w, scores.data, d, theta.data, strict)

    return ad.make_op(w, (scores, theta), backward), d


def split_heads(x, n_heads):
    b, l, f = x.shape
    if f % n_heads:
        raise ShapeError(f"feature size {f} not divisible by {n_heads} heads")
    return x.reshape(b, l, n_heads, f // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    b, n, l, f = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, n * f)


def monotonic_attention(A, B, params, stage, n_heads, strict, distance_grad=False,
                        cache=None, return_weights=False):
    """Attention with queries/keys from ``A`` and values from ``B``.

    Per head: ``softmax(exp(-theta * dist) * Q K^T / sqrt(d_k)) V`` with the
    causal mask applied before the softmax. Heads are concatenated on the
    feature axis.
    """
    if A.shape[1] == 0:
        raise ShapeError("attention over an empty sequence")
    l = A.shape[1]
    Ah, Bh = split_heads(A, n_heads), split_heads(B, n_heads)
    Q = ad.matmul(Ah, params[f"{stage}.W_Q"])
    K = ad.matmul(Ah, params[f"{stage}.W_K"])
    V = ad.matmul(Bh, params[f"{stage}.W_V"])
    d_k = Q.shape[-1]
    scores = ad.matmul(Q, ad.swapaxes(K, -1, -2)) * (1.0 / np.sqrt(d_k))
    mask = causal_mask(l, strict)

    theta = ad.exp(params[f"{stage}.theta_raw"])
    if distance_grad:
        dist = _distance_graph(scores, mask, strict)
        decay = ad.exp(-(theta.reshape(1, n_heads, 1, 1) * dist))
        weights = ad.softmax_masked(decay * scores, mask, allow_empty=strict)
        dist_values = dist.data
    else:
        given = None
        if cache is not None and cache.replay and stage in cache.values:
            given = cache.values[stage]
        weights, dist_values = decayed_softmax(scores, theta, strict, given)
    if cache is not None and not cache.replay:
        cache.values[stage] = dist_values.copy()
    out = merge_heads(ad.matmul(weights, V))
    if return_weights:
        return out, weights
    return out


def forward_stack(X, Y, params, config, cache=None):
    """Question encoder, knowledge encoder and knowledge retriever.

    Each stage is wrapped as ``LayerNorm(query_input + attention)``. Returns
    ``(H, X_prime)``.
    """
    n = config.n_heads
    g = config.distance_grad
    Xa = monotonic_attention(X, X, params, "qenc", n, False, g, cache)
    Xp = ad.layer_norm(X + Xa, params["qenc.ln_gain"], params["qenc.ln_bias"])
    Ya = monotonic_attention(Y, Y, params, "kenc", n, False, g, cache)
    Yp = ad.layer_norm(Y + Ya, params["kenc.ln_gain"], params["kenc.ln_bias"])
    if config.retriever_value == "project":
        Yp = ad.matmul(Yp, params["kret.W_Y"])
    Ha = monotonic_attention(Xp, Yp, params, "kret", n, True, g, cache)
    H = ad.layer_norm(Xp + Ha, params["kret.ln_gain"], params["kret.ln_bias"])
    return H, Xp


def init_attention_params(config, rng, dtype):
    """Glorot-uniform projections; decay rates start at ``exp(-theta) = decay_init``."""
    D, n = config.dim, config.n_heads
    dh = D // n
    theta0 = -np.log(config.decay_init)
    p = {}

    def glorot(shape):
        fan_in, fan_out = shape[-2], shape[-1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    dims = {"qenc": (dh, dh), "kenc": (2 * dh, 2 * dh), "kret": (dh, dh)}
    feat = {"qenc": D, "kenc": 2 * D, "kret": D}
    for stage in STAGES:
        qk, v_in = dims[stage]
        p[f"{stage}.W_Q"] = glorot((n, qk, qk))
        p[f"{stage}.W_K"] = glorot((n, qk, qk))
        if stage == "kret":
            v_in = 2 * dh if config.retriever_value == "rect" else dh
        p[f"{stage}.W_V"] = glorot((n, v_in, qk if stage != "kenc" else 2 * dh))
        p[f"{stage}.theta_raw"] = np.full(n, np.log(theta0), dtype=dtype)
        p[f"{stage}.ln_gain"] = np.ones(feat[stage], dtype=dtype)
        p[f"{stage}.ln_bias"] = np.zeros(feat[stage], dtype=dtype)
    if config.retriever_value == "project":
        p["kret.W_Y"] = glorot((2 * D, D))
    return p
