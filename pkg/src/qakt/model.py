"""The QAKT model: parameters, forward pass and loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import forward_stack, init_attention_params
from .embedding import encode_batch, relevance
from .prediction import init_prediction_params, predict


@dataclass
class ForwardOutput:
    probs: ad.Tensor      # (B, l)
    tags: ad.Tensor       # (B, l, N)
    X: ad.Tensor
    H: ad.Tensor


@dataclass
class LossBreakdown:
    total: ad.Tensor
    prediction: float
    sparse: float
    difficulty: float
    n_positions: int
    probs: np.ndarray


def loss_prediction(probs, targets, mask):
    """Summed binary cross-entropy over unmasked positions."""
    return ad.binary_cross_entropy(probs, targets, mask)


def loss_sparse(tags, mask=None):
    """Sum of ``0.5 - |c - 0.5|`` over unmasked positions and skills."""
    tags = ad.as_tensor(tags)
    term = 0.5 - ad.abs_(tags - 0.5)
    if mask is not None:
        m = np.asarray(mask, dtype=tags.dtype)
        term = term * m.reshape(*m.shape, *([1] * (tags.ndim - m.ndim)))
    return term.sum()


def loss_difficulty(u):
    """Sum of squared question difficulties (padding entry included)."""
    u = ad.as_tensor(u)
    return (u * u).sum()


def total_loss(l_p, l_s, l_c, beta, lam):
    out = l_p
    if beta:
        out = out + beta * l_s
    if lam:
        out = out + lam * l_c
    return out


class QAKTModel:
    """Parameter store plus forward computation.

    ``params`` maps names to leaf tensors. In frozen-binary mode the q-matrix
    is held in ``frozen_q`` (an ``N x M`` 0/1 array) and ``W_p`` is absent.
    """

    def __init__(self, config, seed=None, frozen_qmatrix=None):
        self.config = config.validate()
        self.dtype = config.dtype
        self.params = {}
        self.frozen_q = None
        self.reinitialize(seed=config.seed if seed is None else seed, frozen_qmatrix=frozen_qmatrix)

    # -- parameters -------------------------------------------------------
    def reinitialize(self, seed=None, frozen_qmatrix=None):
        cfg = self.config
        if seed is None:
            seed = cfg.seed
        rng = np.random.default_rng(seed)
        N, M, D = cfg.n_skills, cfg.n_questions, cfg.dim
        dt = self.dtype
        p = {}
        if frozen_qmatrix is None:
            a = cfg.qmatrix_init_scale
            p["W_p"] = rng.uniform(-a, a, size=(N, M)).astype(dt)
            self.frozen_q = None
        else:
            q = np.asarray(frozen_qmatrix)
            if q.shape != (N, M):
                from .errors import ConfigError
                raise ConfigError(f"q-matrix shape {q.shape} does not match (N={N}, M={M})")
            self.frozen_q = q.astype(np.uint8).copy()
        p["w_pad"] = rng.uniform(-1, 1, size=N).astype(dt)
        lim = np.sqrt(6.0 / (N + D))
        p["E"] = rng.uniform(-lim, lim, size=(D, N)).astype(dt)
        p["d"] = np.zeros(D, dtype=dt)
        p["u"] = np.zeros(M + 1, dtype=dt)
        if not cfg.no_ln:
            p["ln_x_gain"] = np.ones(D, dtype=dt)
            p["ln_x_bias"] = np.zeros(D, dtype=dt)
            p["ln_y_gain"] = np.ones(2 * D, dtype=dt)
            p["ln_y_bias"] = np.zeros(2 * D, dtype=dt)
        p.update(init_attention_params(cfg, rng, dt))
        p.update(init_prediction_params(cfg, rng, dt))
        self.params = {name: ad.Tensor(v, requires_grad=True, name=name) for name, v in p.items()}
        return self

    @property
    def qmatrix_mode(self):
        return "trainable" if self.frozen_q is None else "frozen-binary"

    def n_parameters(self):
        return int(sum(t.size for t in self.params.values()))

    def relevance(self):
        return relevance(self.params, self.frozen_q)

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            from .errors import ConfigError
            raise ConfigError(f"parameter sets differ: {sorted(missing)}")
        for n, t in self.params.items():
            t.data[...] = state[n]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    # -- computation ------------------------------------------------------
    def forward(self, batch, training=False, rng=None, cache=None, exercise_dropout=None):
        cfg = self.config
        enc = encode_batch(batch.questions, batch.responses, batch.mask, self.params, cfg,
                           self.frozen_q, training, rng, exercise_dropout)
        H, _ = forward_stack(enc.X, enc.Y, self.params, cfg, cache)
        probs = predict(H, enc.X, self.params, training, rng, cfg.prediction_dropout)
        return ForwardOutput(probs, enc.tags, enc.X, H)

    def loss(self, batch, beta, lam, training=False, rng=None, cache=None, exercise_dropout=None):
        out = self.forward(batch, training, rng, cache, exercise_dropout)
        mask = batch.mask
        l_p = loss_prediction(out.probs, batch.responses, mask)
        l_s = loss_sparse(out.tags, mask) if beta else None
        l_c = loss_difficulty(self.params["u"]) if lam else None
        total = total_loss(l_p, l_s, l_c, beta, lam)
        return LossBreakdown(
            total=total,
            prediction=float(l_p.data),
            sparse=float(l_s.data) if l_s is not None else float(loss_sparse(out.tags.data, mask).data),
            difficulty=float(l_c.data) if l_c is not None else float(loss_difficulty(self.params["u"].data).data),
            n_positions=int(np.sum(mask)),
            probs=out.probs.data,
        )

    def predict(self, batch):
        with ad.no_grad():
            return self.forward(batch, training=False).probs.data
