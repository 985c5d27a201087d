"""Question and response embeddings built from the relevance table.

Question indices run over ``0..M`` where 0 is the padding question. Its skill
tags come from a separate trainable logit vector in both q-matrix modes, and
it stands in for the inactive half of every response encoding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SUM_FLOOR = 1e-8


@dataclass
class EncodedBatch:
    X: ad.Tensor        # (B, l, D)
    Y: ad.Tensor        # (B, l, 2D)
    tags: ad.Tensor     # (B, l, N) skill tags of the asked question
    mask: np.ndarray    # (B, l) loss mask


def relevance(params, frozen_q=None):
    """``sigmoid(W_p)`` in trainable mode; the stored 0/1 matrix when frozen."""
    if frozen_q is not None:
        return ad.Tensor(np.asarray(frozen_q, dtype=params["w_pad"].dtype))
    return ad.sigmoid(params["W_p"])


def tag_table(params, frozen_q=None):
    """``(M + 1, N)`` table whose row ``q`` is the skill-tag vector of question q."""
    pad = ad.sigmoid(params["w_pad"]).reshape(1, -1)
    return ad.concat([pad, relevance(params, frozen_q).T], axis=0)


def skill_tags(table, q):
    """Gather tag vectors for question indices ``q`` (any shape)."""
    return ad.take(table, q, axis=0)


def skill_encoding(c, E, d, no_act=False, no_avg=False):
    """``relu(E c + d) / max(sum(c), floor)`` over the last axis of ``c``.

    ``E`` is ``(D, N)``. ``no_act`` drops the relu, ``no_avg`` the division.
    """
    if c.ndim == 1:
        return skill_encoding(c.reshape(1, -1), E, d, no_act, no_avg).reshape(-1)
    k = ad.matmul(c, E.T) + d
    if not no_act:
        k = ad.relu(k)
    if not no_avg:
        total = c.sum(axis=-1, keepdims=True)
        k = ad.div(k, ad.clip(total, SUM_FLOOR, np.inf))
    return k


def _norm(x, params, prefix, per_half=False):
    gain, bias = params[f"{prefix}_gain"], params[f"{prefix}_bias"]
    if not per_half:
        return ad.layer_norm(x, gain, bias)
    a, b = ad.split(x, 2, axis=-1)
    return ad.concat([ad.layer_norm(a), ad.layer_norm(b)], axis=-1) * gain + bias


def encode_batch(questions, responses, mask, params, config, frozen_q=None,
                 training=False, rng=None, exercise_dropout=None):
    """Embed a batch of question/response index arrays of shape ``(B, l)``."""
    questions = np.asarray(questions, dtype=np.int64)
    responses = np.asarray(responses, dtype=np.int64)
    if np.any((responses != 0) & (responses != 1)):
        from .errors import DataError
        raise DataError("responses must be 0 or 1")
    rate = config.exercise_dropout if exercise_dropout is None else exercise_dropout
    table = tag_table(params, frozen_q)
    q_pos = np.where(responses == 1, questions, 0)
    q_neg = np.where(responses == 1, 0, questions)
    tags3 = skill_tags(table, np.stack([questions, q_pos, q_neg]))        # (3, B, l, N)
    k3 = skill_encoding(tags3, params["E"], params["d"], config.no_act, config.no_avg)
    k3 = ad.dropout(k3, rate, training, rng)
    k_q, k_pos, k_neg = (ad.getitem(k3, i) for i in range(3))
    tags = ad.getitem(tags3, 0)

    mu = ad.take(params["u"], questions).reshape(*questions.shape, 1)
    x = k_q + mu
    if config.mu_both_halves:
        y = ad.concat([k_pos + mu, k_neg + mu], axis=-1)
    else:
        r = responses[..., None].astype(mu.dtype)
        y = ad.concat([k_pos + mu * r, k_neg + mu * (1 - r)], axis=-1)
    if not config.no_ln:
        x = _norm(x, params, "ln_x")
        y = _norm(y, params, "ln_y", per_half=config.response_norm == "per-half")
    return EncodedBatch(x, y, tags, np.asarray(mask, dtype=bool))


def encode_question(q, params, config, frozen_q=None):
    """Length-D embedding of a single question (eval mode)."""
    enc = encode_batch([[q]], [[0]], [[True]], params, config, frozen_q)
    return enc.X.data[0, 0]


def encode_response(q, r, params, config, frozen_q=None):
    """Length-2D embedding of a single (question, response) pair (eval mode)."""
    if r not in (0, 1):
        from .errors import DataError
        raise DataError(f"response must be 0 or 1, got {r!r}")
    enc = encode_batch([[q]], [[r]], [[True]], params, config, frozen_q)
    return enc.Y.data[0, 0]
