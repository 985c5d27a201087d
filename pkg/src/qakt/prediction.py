"""Response prediction network: three (norm, linear, dropout) layers then sigmoid."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


def layer_dims(dim):
    return [2 * dim, dim, max(dim // 2, 1), 1]


def init_prediction_params(config, rng, dtype):
    dims = layer_dims(config.dim)
    p = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        lim = np.sqrt(6.0 / (a + b))
        p[f"pred.{i}.ln_gain"] = np.ones(a, dtype=dtype)
        p[f"pred.{i}.ln_bias"] = np.zeros(a, dtype=dtype)
        p[f"pred.{i}.W"] = rng.uniform(-lim, lim, size=(a, b)).astype(dtype)
        p[f"pred.{i}.b"] = np.zeros(b, dtype=dtype)
    return p


def predict(H, X, params, training=False, rng=None, dropout_rate=0.05):
    """Correctness probabilities of shape ``(B, l)`` from ``H`` and ``X`` (both ``(B, l, D)``).

    Every position is mapped independently. The last layer has no activation
    or dropout before the sigmoid.
    """
    if H.shape != X.shape:
        raise ShapeError(f"knowledge state {H.shape} and question embedding {X.shape} differ")
    z = ad.concat([H, X], axis=-1)
    n_layers = 3
    for i in range(n_layers):
        z = ad.layer_norm(z, params[f"pred.{i}.ln_gain"], params[f"pred.{i}.ln_bias"])
        z = ad.matmul(z, params[f"pred.{i}.W"]) + params[f"pred.{i}.b"]
        if i < n_layers - 1:
            z = ad.relu(z)
            z = ad.dropout(z, dropout_rate, training, rng)
    return ad.sigmoid(z.reshape(*z.shape[:-1]))
