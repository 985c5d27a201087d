"""Run configuration."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError

BINARIZE_RULES = ("threshold-ge", "paper-literal")
BINARIZE_AXES = ("question-column", "skill-row")


@dataclass
class RunConfig:
    # dimensions
    n_skills: int = 10
    n_questions: int = 0
    dim: int = 64
    n_heads: int = 8
    slice_length: int = 200
    # optimisation
    batch_size: int = 24
    max_epochs: int = 300
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 10
    early_stopping: bool = True
    # loss weights per phase
    beta_phase1: float = 1.0
    lambda_phase1: float = 1e-5
    beta_phase2: float = 0.0
    lambda_phase2: float = 1e-5
    sparse_delay_epochs: int = 0
    # q-matrix logits
    qmatrix_init_scale: float = 1.0
    qmatrix_lr_scale: float = 1.0
    # binarisation
    eta: float = 0.99
    binarize_rule: str = "threshold-ge"
    binarize_axis: str = "question-column"
    guarantee_min_one_skill: bool = True
    # regularisation
    exercise_dropout: float = 0.05
    prediction_dropout: float = 0.05
    # ablations and interpretation flags
    no_act: bool = False
    no_avg: bool = False
    no_ln: bool = False
    mu_both_halves: bool = True
    response_norm: str = "joint"
    retriever_value: str = "rect"
    distance_grad: bool = False
    decay_init: float = 0.9
    # bookkeeping
    precision: str = "float32"
    seed: int = 0
    n_folds: int = 5
    name: str = "qakt"

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == "float32" else np.float64

    def validate(self):
        ints_pos = ("n_skills", "dim", "n_heads", "slice_length", "batch_size", "max_epochs", "patience")
        for name in ints_pos:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.n_questions, int) or self.n_questions < 0:
            raise ConfigError("n_questions must be a non-negative integer")
        if self.slice_length < 2:
            raise ConfigError("slice_length must be at least 2")
        if self.dim % self.n_heads:
            raise ConfigError(f"dim={self.dim} is not divisible by n_heads={self.n_heads}")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        for name in ("beta_phase1", "beta_phase2", "lambda_phase1", "lambda_phase2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not isinstance(self.sparse_delay_epochs, int) or self.sparse_delay_epochs < 0:
            raise ConfigError("sparse_delay_epochs must be a non-negative integer")
        if self.qmatrix_init_scale < 0:
            raise ConfigError("qmatrix_init_scale must be non-negative")
        if self.qmatrix_lr_scale <= 0:
            raise ConfigError("qmatrix_lr_scale must be positive")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.binarize_rule not in BINARIZE_RULES:
            raise ConfigError(f"binarize_rule must be one of {BINARIZE_RULES}")
        if self.binarize_axis not in BINARIZE_AXES:
            raise ConfigError(f"binarize_axis must be one of {BINARIZE_AXES}")
        for name in ("exercise_dropout", "prediction_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.response_norm not in ("joint", "per-half"):
            raise ConfigError("response_norm must be 'joint' or 'per-half'")
        if self.retriever_value not in ("rect", "project"):
            raise ConfigError("retriever_value must be 'rect' or 'project'")
        if not 0 < self.decay_init < 1:
            raise ConfigError("decay_init must lie in (0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be 'float32' or 'float64'")
        if self.n_folds < 3:
            raise ConfigError("n_folds must be at least 3")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        types = {f.name: f.type for f in fields(cls)}
        clean = {}
        for k, v in d.items():
            if types[k] == "float" and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            clean[k] = v
        return cls(**clean).validate()

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def updated(self, **changes):
        return replace(self, **changes).validate()
