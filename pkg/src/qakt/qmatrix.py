"""Binary skill-by-question matrices and recovery scoring.

``match_and_score`` finds the skill (row) permutation that maximises entry
agreement between a learned and a reference matrix, then reports entrywise
precision/recall/F1 under that assignment together with a density-matched
random baseline.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError

EXHAUSTIVE_MAX_SKILLS = 10


class QMatrixWarning(UserWarning):
    pass


class QMatrix:
    """An ``N x M`` 0/1 matrix; rows are skills, columns are questions."""

    def __init__(self, entries, question_ids=None, skill_labels=None):
        arr = np.asarray(entries)
        if arr.ndim != 2:
            raise DataError(f"q-matrix must be 2-D, got shape {arr.shape}")
        if not np.all((arr == 0) | (arr == 1)):
            raise DataError("q-matrix entries must be 0 or 1")
        self.entries = arr.astype(np.uint8)
        n, m = self.entries.shape
        self.question_ids = [str(q) for q in question_ids] if question_ids is not None else [f"q{j + 1}" for j in range(m)]
        self.skill_labels = [str(s) for s in skill_labels] if skill_labels is not None else [str(i) for i in range(n)]
        if len(self.question_ids) != m:
            raise DataError(f"{len(self.question_ids)} question ids for {m} columns")
        if len(self.skill_labels) != n:
            raise DataError(f"{len(self.skill_labels)} skill labels for {n} rows")

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n_skills(self):
        return self.entries.shape[0]

    @property
    def n_questions(self):
        return self.entries.shape[1]

    @property
    def density(self):
        return float(self.entries.mean()) if self.entries.size else 0.0

    def empty_columns(self):
        return np.flatnonzero(self.entries.sum(axis=0) == 0)

    def column(self, question_id):
        return self.entries[:, self.question_ids.index(str(question_id))]

    def reorder(self, question_ids):
        """Return a copy whose columns follow ``question_ids``."""
        pos = {q: j for j, q in enumerate(self.question_ids)}
        try:
            cols = [pos[str(q)] for q in question_ids]
        except KeyError as exc:
            raise DataError(f"question {exc.args[0]!r} missing from q-matrix") from None
        return QMatrix(self.entries[:, cols], list(question_ids), self.skill_labels)

    def __eq__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return (np.array_equal(self.entries, other.entries)
                and self.question_ids == other.question_ids
                and self.skill_labels == other.skill_labels)

    def __repr__(self):
        return f"QMatrix(N={self.n_skills}, M={self.n_questions}, density={self.density:.3f})"


def read_qmatrix(path):
    """Read the CSV layout: header row of question ids, then one row per skill."""
    import csv
    from .errors import FormatError

    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    rows = [r for r in rows if r]
    if not rows:
        raise FormatError(f"{path}: empty q-matrix file")
    header = rows[0]
    question_ids = header[1:]
    if not question_ids:
        raise FormatError(f"{path}: header has no question columns")
    labels, body = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        values = []
        for cell in row[1:]:
            if cell not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: non-binary entry {cell!r}")
            values.append(int(cell))
        labels.append(row[0])
        body.append(values)
    if not body:
        raise FormatError(f"{path}: q-matrix has no skill rows")
    q = QMatrix(np.array(body, dtype=np.uint8), question_ids, labels)
    empty = q.empty_columns()
    if empty.size:
        warnings.warn(f"{path}: {empty.size} question(s) have no skill: "
                      f"{[question_ids[j] for j in empty[:10]]}", QMatrixWarning, stacklevel=2)
    return q


def write_qmatrix(q, path, header=None):
    """Write ``q`` in the layout read by :func:`read_qmatrix`.

    ``header`` is an optional mapping emitted as ``# key=value`` comment lines.
    """
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["skill", *q.question_ids])
        for label, row in zip(q.skill_labels, q.entries):
            w.writerow([label, *map(int, row)])


# -- recovery scoring --------------------------------------------------------

@dataclass
class RecoveryReport:
    permutation: list          # learned row i is matched to reference row permutation[i]
    method: str
    precision: float
    recall: float
    f1: float
    exact_match_rate: float
    baseline_f1: float
    agreement: int
    n_skills: int
    n_questions: int
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = [
            f"method: {self.method}",
            f"n_skills: {self.n_skills}",
            f"n_questions: {self.n_questions}",
            f"permutation: {' '.join(map(str, self.permutation))}",
            f"agreement: {self.agreement}",
            f"precision: {self.precision:.6f}",
            f"recall: {self.recall:.6f}",
            f"f1: {self.f1:.6f}",
            f"exact_match_rate: {self.exact_match_rate:.6f}",
            f"baseline_f1: {self.baseline_f1:.6f}",
        ]
        lines += [f"{k}: {v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        keys = ["method", "n_skills", "n_questions", "agreement", "precision", "recall",
                "f1", "exact_match_rate", "baseline_f1", "permutation"]
        values = [self.method, self.n_skills, self.n_questions, self.agreement,
                  f"{self.precision:.6f}", f"{self.recall:.6f}", f"{self.f1:.6f}",
                  f"{self.exact_match_rate:.6f}", f"{self.baseline_f1:.6f}",
                  " ".join(map(str, self.permutation))]
        return ",".join(keys) + "\n" + ",".join(map(str, values)) + "\n"


def _pad_rows(a, n):
    if a.shape[0] == n:
        return a
    return np.vstack([a, np.zeros((n - a.shape[0], a.shape[1]), dtype=a.dtype)])


def agreement_matrix(learned, reference):
    """``A[i, j]`` = number of questions where learned row i equals reference row j."""
    a = learned.astype(np.int64)
    b = reference.astype(np.int64)
    both = a @ b.T
    neither = (1 - a) @ (1 - b).T
    return both + neither


def _greedy_assignment(agree):
    """Greedy pick then pairwise swaps until no swap improves the total."""
    n = agree.shape[0]
    perm = np.full(n, -1, dtype=np.int64)
    free_rows, free_cols = set(range(n)), set(range(n))
    order = np.dstack(np.unravel_index(np.argsort(-agree, axis=None, kind="stable"), agree.shape))[0]
    for i, j in order:
        if i in free_rows and j in free_cols:
            perm[i] = j
            free_rows.discard(i)
            free_cols.discard(j)
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for k in range(i + 1, n):
                cur = agree[i, perm[i]] + agree[k, perm[k]]
                swp = agree[i, perm[k]] + agree[k, perm[i]]
                if swp > cur:
                    perm[i], perm[k] = perm[k], perm[i]
                    improved = True
    return perm, int(agree[np.arange(n), perm].sum())


def best_row_assignment(learned, reference):
    """Optimal row matching; returns ``(perm, total_agreement, method)``."""
    agree = agreement_matrix(learned, reference)
    if agree.shape[0] <= EXHAUSTIVE_MAX_SKILLS:
        perm, total = kernels.best_assignment(agree)
        return perm, total, "exhaustive"
    perm, total = _greedy_assignment(agree)
    return perm, total, "greedy-swap"


def _prf(pred, truth):
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _score(learned, reference):
    n = max(learned.shape[0], reference.shape[0])
    a = _pad_rows(learned, n)
    b = _pad_rows(reference, n)
    perm, total, method = best_row_assignment(a, b)
    aligned = np.zeros_like(b)
    aligned[perm] = a
    p, r, f = _prf(aligned, b)
    exact = float(np.mean(np.all(aligned == b, axis=0))) if b.shape[1] else 0.0
    return perm, total, method, p, r, f, exact


def random_baseline_f1(learned, reference, seed=0, trials=5):
    """Mean F1 of density-matched random matrices, each optimally matched."""
    rng = np.random.default_rng(seed)
    density = learned.mean() if learned.size else 0.0
    scores = []
    for _ in range(trials):
        rand = (rng.random(learned.shape) < density).astype(np.uint8)
        scores.append(_score(rand, reference)[5])
    return float(np.mean(scores))


def match_and_score(q_learned, q_true, seed=0, baseline_trials=5):
    """Permutation-invariant comparison of a learned q-matrix against a reference."""
    a = q_learned.entries if isinstance(q_learned, QMatrix) else np.asarray(q_learned, dtype=np.uint8)
    b = q_true.entries if isinstance(q_true, QMatrix) else np.asarray(q_true, dtype=np.uint8)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"question counts differ: {a.shape[1]} vs {b.shape[1]}")
    perm, total, method, p, r, f, exact = _score(a, b)
    base = random_baseline_f1(a, b, seed=seed, trials=baseline_trials)
    return RecoveryReport(
        permutation=[int(x) for x in perm], method=method, precision=p, recall=r, f1=f,
        exact_match_rate=exact, baseline_f1=base, agreement=total,
        n_skills=max(a.shape[0], b.shape[0]), n_questions=a.shape[1],
    )


# -- injection and expert tags -------------------------------------------------

def inject(q, model):
    """Switch ``model`` to a frozen copy of ``q`` and reinitialise everything else."""
    entries = q.entries if isinstance(q, QMatrix) else np.asarray(q)
    cfg = model.config
    if entries.shape != (cfg.n_skills, cfg.n_questions):
        raise ConfigError(f"q-matrix shape {entries.shape} does not match model "
                          f"(N={cfg.n_skills}, M={cfg.n_questions})")
    model.reinitialize(frozen_qmatrix=entries)
    return model


def expert_qmatrix_from_tags(log):
    """Multi-hot q-matrix from the skill tags carried by an interaction log."""
    skills = list(log.skill_index)
    if not skills:
        raise DataError("no interaction carries expert skill tags")
    entries = np.zeros((len(skills), log.n_questions), dtype=np.uint8)
    for it in log.interactions:
        if it.expert_skills:
            j = log.question_index[it.question_id] - 1
            for s in it.expert_skills:
                entries[log.skill_index[s], j] = 1
    q = QMatrix(entries, log.question_ids, skills)
    empty = q.empty_columns()
    if empty.size:
        warnings.warn(f"{empty.size} question(s) have no expert tag", QMatrixWarning, stacklevel=2)
    return q
