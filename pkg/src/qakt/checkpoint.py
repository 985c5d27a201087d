"""Checkpoint files.

A checkpoint is an uncompressed ``.npz`` archive with these members:

``format_version``   int64 scalar, currently 1
``config``           JSON text of the :class:`RunConfig`
``param/<name>``     one array per model parameter
``frozen_q``         ``N x M`` uint8 q-matrix (frozen-binary mode only)
``question_ids``     vocabulary in index order (index 1 first)
``rng_state``        JSON text of a numpy bit-generator state, or ``"null"``
``meta``             JSON text with free-form extra fields

Everything is stored without pickling.
"""
from __future__ import annotations

import json
import os
import zipfile

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DataError
from .model import QAKTModel

FORMAT_VERSION = 1


def save_checkpoint(path, model, question_ids=(), rng=None, meta=None):
    arrays = {
        "format_version": np.array(FORMAT_VERSION, dtype=np.int64),
        "config": np.array(model.config.to_json()),
        "question_ids": np.array([str(q) for q in question_ids], dtype=str),
        "rng_state": np.array(json.dumps(rng.bit_generator.state if rng is not None else None)),
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for name, t in model.params.items():
        arrays[f"param/{name}"] = t.data
    if model.frozen_q is not None:
        arrays["frozen_q"] = model.frozen_q
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


class Checkpoint:
    def __init__(self, model, question_ids, rng_state, meta):
        self.model = model
        self.question_ids = question_ids
        self.rng_state = rng_state
        self.meta = meta

    def rng(self):
        """A generator restored to the saved state (fresh PCG64 if none was saved)."""
        gen = np.random.default_rng()
        if self.rng_state is not None:
            gen.bit_generator.state = self.rng_state
        return gen


def load_checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as z:
            files = set(z.files)
            version = int(z["format_version"])
            if version != FORMAT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {version}")
            config = RunConfig.from_dict(json.loads(str(z["config"])))
            params = {k[len("param/"):]: z[k] for k in files if k.startswith("param/")}
            frozen = z["frozen_q"] if "frozen_q" in files else None
            qids = [str(q) for q in z["question_ids"]]
            rng_state = json.loads(str(z["rng_state"]))
            meta = json.loads(str(z["meta"]))
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise DataError(f"{path}: not a readable checkpoint ({exc})") from None
    model = QAKTModel(config, frozen_qmatrix=frozen)
    model.load_state_dict(params)
    return Checkpoint(model, qids, rng_state, meta)
