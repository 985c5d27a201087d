"""Losses, binarization, metrics and the two-phase training protocol."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import InteractionLog, kfold, make_batch, slice_sequences
from .errors import ConfigError, NumericError, UndefinedMetricError
from .model import QAKTModel, loss_difficulty, loss_prediction, loss_sparse, total_loss
from .qmatrix import QMatrix, match_and_score

__all__ = [
    "LossConfig", "BinarizationConfig", "TrainState", "HistoryRow", "PhaseResult", "FoldResult",
    "ExperimentResult", "loss_prediction", "loss_sparse", "loss_difficulty", "total_loss",
    "binarize", "auc", "frequency_baseline", "evaluate", "sparse_weight", "train_phase", "run_fold",
    "run_experiment", "run_sweep", "run_ablation", "ABLATIONS", "history_csv", "write_history",
    "RecoveryResult", "synthetic_recovery",
]

HISTORY_COLUMNS = ("fold", "phase", "epoch", "split", "L_p", "L_s", "L_c", "L", "AUC")
ABLATIONS = {
    "default": {},
    "NoAct": {"no_act": True},
    "NoAvg": {"no_avg": True},
    "NoLN": {"no_ln": True},
}


# -- configuration views -------------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    beta: float
    lam: float
    phase: int

    @classmethod
    def for_phase(cls, config, phase):
        if phase == 1:
            return cls(config.beta_phase1, config.lambda_phase1, 1)
        if phase == 2:
            return cls(config.beta_phase2, config.lambda_phase2, 2)
        raise ConfigError(f"phase must be 1 or 2, got {phase}")


@dataclass(frozen=True)
class BinarizationConfig:
    eta: float = 0.99
    rule: str = "threshold-ge"
    axis: str = "question-column"
    guarantee_min_one_skill: bool = True

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.rule not in ("threshold-ge", "paper-literal"):
            raise ConfigError(f"unknown binarization rule {self.rule!r}")
        if self.axis not in ("question-column", "skill-row"):
            raise ConfigError(f"unknown binarization axis {self.axis!r}")

    @classmethod
    def from_run_config(cls, config):
        return cls(config.eta, config.binarize_rule, config.binarize_axis,
                   config.guarantee_min_one_skill)


# -- binarization and metrics --------------------------------------------------

def binarize(P, config=None):
    """Turn an ``N x M`` relevance table into a 0/1 q-matrix.

    ``paper-literal`` marks entries strictly below ``eta`` times their skill
    row's maximum. ``threshold-ge`` marks entries at or above ``eta`` times the
    maximum along ``config.axis``. With the guarantee on, any question left
    without a skill gets one at its largest entry (lowest index on ties).
    """
    config = config or BinarizationConfig()
    P = np.asarray(P.data if isinstance(P, ad.Tensor) else P, dtype=np.float64)
    if P.ndim != 2:
        raise ConfigError(f"relevance table must be 2-D, got shape {P.shape}")
    if config.rule == "paper-literal":
        out = P < config.eta * P.max(axis=1, keepdims=True)
    else:
        axis = 0 if config.axis == "question-column" else 1
        out = P >= config.eta * P.max(axis=axis, keepdims=True)
    out = out.astype(np.uint8)
    if config.guarantee_min_one_skill and P.shape[0]:
        empty = np.flatnonzero(out.sum(axis=0) == 0)
        out[np.argmax(P[:, empty], axis=0), empty] = 1
    return out


def auc(scores, labels):
    """Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes (got {n_pos} positive, {n_neg} negative)")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    # average ranks over tie groups
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pooled(sequences):
    q = np.concatenate([s.questions[s.mask] for s in sequences]) if sequences else np.zeros(0, int)
    r = np.concatenate([s.responses[s.mask] for s in sequences]) if sequences else np.zeros(0, int)
    return q, r


def frequency_baseline(train_sequences, test_sequences):
    """AUC of predicting each question's training accuracy on the test positions.

    Questions unseen in training fall back to the overall training accuracy.
    """
    q_tr, r_tr = _pooled(train_sequences)
    q_te, r_te = _pooled(test_sequences)
    size = int(max(q_tr.max(initial=0), q_te.max(initial=0))) + 1
    counts = np.bincount(q_tr, minlength=size).astype(np.float64)
    hits = np.bincount(q_tr, weights=r_tr, minlength=size)
    overall = r_tr.mean() if r_tr.size else 0.5
    rate = np.where(counts > 0, hits / np.maximum(counts, 1), overall)
    return auc(rate[q_te], r_te)


# -- training ------------------------------------------------------------------

@dataclass
class HistoryRow:
    fold: int
    phase: int
    epoch: int
    split: str
    L_p: float
    L_s: float
    L_c: float
    L: float
    AUC: float


@dataclass
class TrainState:
    """Book-keeping for one phase; ``best_state`` holds the restorable weights."""
    phase: int
    seed: int
    epoch: int = 0
    best_epoch: int = 0
    best_score: float = -math.inf
    best_state: dict = None
    bad_epochs: int = 0
    monitor: str = "AUC"
    optimizer: ad.Adam = None


@dataclass
class PhaseResult:
    model: QAKTModel
    history: list
    best_epoch: int
    best_score: float
    monitor: str
    stopped_early: bool


def _batches(sequences, batch_size, rng=None):
    idx = np.arange(len(sequences))
    if rng is not None:
        idx = rng.permutation(len(sequences))
    for start in range(0, len(idx), batch_size):
        yield make_batch([sequences[i] for i in idx[start:start + batch_size]])


def _auc_or_nan(scores, labels):
    try:
        return auc(scores, labels)
    except UndefinedMetricError:
        return float("nan")


def evaluate(model, sequences, loss_config=None, batch_size=24):
    """Eval-mode pass; returns ``(row_values, probs, labels)`` pooled over unmasked positions.

    ``row_values`` holds per-position means of the prediction and sparse
    losses, the difficulty penalty, the weighted total and the AUC.
    """
    lc = loss_config or LossConfig(0.0, 0.0, 2)
    sums = np.zeros(3)
    n = 0
    probs, labels = [], []
    with ad.no_grad():
        for batch in _batches(sequences, batch_size):
            out = model.forward(batch, training=False)
            sums[0] += float(loss_prediction(out.probs, batch.responses, batch.mask).data)
            sums[1] += float(loss_sparse(out.tags.data, batch.mask).data)
            n += int(batch.mask.sum())
            probs.append(out.probs.data[batch.mask])
            labels.append(batch.responses[batch.mask])
    probs = np.concatenate(probs) if probs else np.zeros(0)
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    l_c = float(loss_difficulty(model.params["u"].data).data)
    n = max(n, 1)
    l_p, l_s = sums[0] / n, sums[1] / n
    values = dict(L_p=l_p, L_s=l_s, L_c=l_c, L=l_p + lc.beta * l_s + lc.lam * l_c,
                  AUC=_auc_or_nan(probs, labels))
    return values, probs, labels


def _param_norms(model):
    return ", ".join(f"{k}={np.linalg.norm(t.data):.3g}" for k, t in model.params.items())


def _derive_seed(*parts):
    return int(np.random.default_rng(list(parts)).integers(2**31 - 1))


def sparse_weight(beta, epoch, delay):
    """Sparse-loss weight for ``epoch`` (1-based): zero for the first ``delay`` epochs."""
    return beta if epoch > delay else 0.0


def train_phase(model, train, validation, config, phase, fold=0, frozen_qmatrix=None,
                log_fn=None):
    """Train ``model`` in place for one phase and return a :class:`PhaseResult`.

    Phase 2 requires ``frozen_qmatrix`` (binary ``N x M``); every other
    parameter is re-initialised before training. Validation AUC drives early
    stopping; when the validation split is single-class the validation
    prediction loss is monitored instead.
    """
    lc = LossConfig.for_phase(config, phase)
    seed = _derive_seed(config.seed, fold, phase)
    if phase == 2:
        if frozen_qmatrix is None:
            raise ConfigError("phase 2 needs a binary q-matrix")
        entries = frozen_qmatrix.entries if isinstance(frozen_qmatrix, QMatrix) else frozen_qmatrix
        model.reinitialize(seed=seed, frozen_qmatrix=entries)
    state = TrainState(phase=phase, seed=seed)
    state.optimizer = ad.Adam(model.params, lr=config.lr,
                              betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps,
                              lr_scale={"W_p": config.qmatrix_lr_scale})
    history = []

    def record(epoch, split, values):
        history.append(HistoryRow(fold, phase, epoch, split, *(float(values[k]) for k in
                                                              ("L_p", "L_s", "L_c", "L", "AUC"))))
        if log_fn is not None:
            log_fn(history[-1])

    def check(values, epoch):
        score = values["AUC"] if state.monitor == "AUC" else -values["L_p"]
        if score > state.best_score:
            state.best_score, state.best_epoch = score, epoch
            state.best_state = model.state_dict()
            state.bad_epochs = 0
        else:
            state.bad_epochs += 1

    train_vals, _, _ = evaluate(model, train, lc, config.batch_size)
    val_vals, _, _ = evaluate(model, validation, lc, config.batch_size)
    if math.isnan(val_vals["AUC"]):
        state.monitor = "L_p"
    record(0, "train", train_vals)
    record(0, "validation", val_vals)
    check(val_vals, 0)
    state.bad_epochs = 0

    stopped = False
    for epoch in range(1, config.max_epochs + 1):
        state.epoch = epoch
        rng = np.random.default_rng([config.seed, fold, phase, epoch])
        beta = sparse_weight(lc.beta, epoch, config.sparse_delay_epochs)
        sums = np.zeros(4)
        n = 0
        probs, labels = [], []
        for b, batch in enumerate(_batches(train, config.batch_size, rng)):
            model.zero_grad()
            parts = model.loss(batch, beta, lc.lam, training=True, rng=rng)
            total = float(parts.total.data)
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss in phase {phase}, epoch {epoch}, batch {b}; "
                                   f"parameter norms: {_param_norms(model)}")
            parts.total.backward()
            bad = [k for k, t in model.params.items()
                   if t.grad is not None and not np.all(np.isfinite(t.grad))]
            if bad:
                raise NumericError(f"non-finite gradient for {', '.join(bad)} in phase {phase}, "
                                   f"epoch {epoch}, batch {b}; parameter norms: {_param_norms(model)}")
            state.optimizer.step()
            sums += (parts.prediction, parts.sparse, parts.difficulty, total)
            n += parts.n_positions
            probs.append(parts.probs[batch.mask])
            labels.append(batch.responses[batch.mask])
        n = max(n, 1)
        l_c = float(loss_difficulty(model.params["u"].data).data)
        record(epoch, "train", dict(L_p=sums[0] / n, L_s=sums[1] / n, L_c=l_c, L=sums[3] / n,
                                    AUC=_auc_or_nan(np.concatenate(probs), np.concatenate(labels))))
        val_vals, _, _ = evaluate(model, validation, lc, config.batch_size)
        record(epoch, "validation", val_vals)
        check(val_vals, epoch)
        if config.early_stopping and state.bad_epochs >= config.patience:
            stopped = True
            break

    if config.early_stopping and state.best_state is not None:
        model.load_state_dict(state.best_state)
    return PhaseResult(model, history, state.best_epoch, state.best_score, state.monitor, stopped)


# -- experiments ---------------------------------------------------------------

@dataclass
class FoldResult:
    experiment: int
    test_auc: float
    baseline_auc: float
    qmatrix: np.ndarray
    history: list
    phase1_best_epoch: int
    phase2_best_epoch: int
    model: QAKTModel = field(default=None, repr=False)


@dataclass
class ExperimentResult:
    folds: list
    label: str = "default"

    @property
    def aucs(self):
        return [f.test_auc for f in self.folds]

    @property
    def mean_auc(self):
        return float(np.mean(self.aucs))

    @property
    def std_auc(self):
        return float(np.std(self.aucs))

    def report(self):
        lines = [f"# {self.label}", "fold,test_auc,frequency_baseline_auc"]
        for f in self.folds:
            lines.append(f"{f.experiment},{f.test_auc:.6f},{f.baseline_auc:.6f}")
        lines.append(f"mean,{self.mean_auc:.6f},{np.mean([f.baseline_auc for f in self.folds]):.6f}")
        return "\n".join(lines) + "\n"


def _split_sequences(log, split, slice_length):
    out = {}
    for role, students in split.roles().items():
        out[role] = slice_sequences(log.subset(students), slice_length)
    return out


def run_fold(log, config, split, qmatrix=None, keep_model=False, log_fn=None):
    """Phase 1, binarize, phase 2 and test AUC for one fold split.

    With ``qmatrix`` given, phase 1 is skipped and the matrix is used as is.
    """
    seqs = _split_sequences(log, split, config.slice_length)
    history = []
    model = QAKTModel(config, seed=_derive_seed(config.seed, split.experiment, 1))
    best1 = 0
    if qmatrix is None:
        r1 = train_phase(model, seqs["train"], seqs["validation"], config, 1,
                         fold=split.experiment, log_fn=log_fn)
        history += r1.history
        best1 = r1.best_epoch
        learned = binarize(model.relevance(), BinarizationConfig.from_run_config(config))
    else:
        learned = np.asarray(qmatrix.entries if isinstance(qmatrix, QMatrix) else qmatrix,
                             dtype=np.uint8)
    r2 = train_phase(model, seqs["train"], seqs["validation"], config, 2,
                     fold=split.experiment, frozen_qmatrix=learned, log_fn=log_fn)
    history += r2.history
    test_vals, _, _ = evaluate(model, seqs["test"], batch_size=config.batch_size)
    if math.isnan(test_vals["AUC"]):
        raise UndefinedMetricError(f"fold {split.experiment}: test split is single-class")
    base = frequency_baseline(seqs["train"], seqs["test"])
    return FoldResult(split.experiment, test_vals["AUC"], base, learned, history, best1,
                      r2.best_epoch, model if keep_model else None)


def _fold_job(args):
    log, config, split, qmatrix = args
    return run_fold(log, config, split, qmatrix)


def run_experiment(log, config, qmatrix=None, experiments=None, jobs=1, label="default",
                   keep_models=False):
    """Cross-validated run; ``experiments`` optionally restricts which folds run."""
    if not isinstance(log, InteractionLog):
        raise ConfigError("run_experiment needs an InteractionLog")
    if config.n_questions != log.n_questions:
        config = config.updated(n_questions=log.n_questions)
    splits = kfold(log, config.n_folds, seed=config.seed)
    if experiments is not None:
        splits = [splits[i] for i in experiments]
    if jobs > 1 and len(splits) > 1 and not keep_models:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_fold_job, [(log, config, s, qmatrix) for s in splits]))
    else:
        folds = [run_fold(log, config, s, qmatrix, keep_model=keep_models) for s in splits]
    return ExperimentResult(folds, label)


def run_sweep(log, config, skill_counts, **kwargs):
    """One experiment per skill count, without early stopping or exercise dropout."""
    out = []
    for n in skill_counts:
        cfg = config.updated(n_skills=int(n), early_stopping=False, exercise_dropout=0.0)
        out.append(run_experiment(log, cfg, label=f"N={n}", **kwargs))
    return out


def run_ablation(log, config, variants=None, **kwargs):
    """One experiment per ablation variant (default plus the three flags)."""
    out = []
    for name in variants or ABLATIONS:
        cfg = config.updated(**ABLATIONS[name])
        out.append(run_experiment(log, cfg, label=name, **kwargs))
    return out


# -- history output ------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def history_csv(rows, config=None, extra=None):
    """Render history rows as CSV text with a ``# config_hash=... seed=...`` header."""
    buf = io.StringIO()
    if config is not None:
        buf.write(f"# config_hash={config.hash()} seed={config.seed}\n")
    for k, v in (extra or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in HISTORY_COLUMNS])
    return buf.getvalue()


def write_history(rows, path, config=None, extra=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(history_csv(rows, config, extra))


@dataclass
class RecoveryResult:
    fold: FoldResult
    recovery: object
    seconds: float

    @property
    def f1_margin(self):
        return self.recovery.f1 - self.recovery.baseline_f1

    @property
    def auc_margin(self):
        return self.fold.test_auc - self.fold.baseline_auc


def synthetic_recovery(log, truth, config, experiment=0, log_fn=None):
    """One fold of the two-phase protocol on data with a known q-matrix.

    The binarized phase-1 matrix is scored against ``truth`` and the phase-2
    test AUC is returned next to the question-frequency baseline.
    """
    start = time.perf_counter()
    if config.n_questions != log.n_questions:
        config = config.updated(n_questions=log.n_questions)
    split = kfold(log, config.n_folds, seed=config.seed)[experiment]
    fold = run_fold(log, config, split, log_fn=log_fn)
    entries = truth.entries if isinstance(truth, QMatrix) else np.asarray(truth)
    rep = match_and_score(fold.qmatrix, entries, seed=config.seed)
    return RecoveryResult(fold, rep, time.perf_counter() - start)

