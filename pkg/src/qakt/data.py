"""Interaction logs: ingest, slicing, k-fold splits and synthetic DINA data."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .qmatrix import QMatrix, read_qmatrix, write_qmatrix  # noqa: F401  (re-exported)

REQUIRED_COLUMNS = ("student_id", "question_id", "correct")
NULL_TOKENS = {"", "na", "nan", "null", "none"}
PAD = 0


@dataclass(frozen=True)
class Interaction:
    student_id: str
    question_id: str
    correct: int
    timestamp: int | None = None
    expert_skills: tuple | None = None


@dataclass
class InteractionLog:
    """Interactions grouped by student (first-appearance order), each group time-ordered.

    ``question_index`` maps question ids to 1..M; index 0 is the padding question.
    """
    interactions: list
    question_index: dict
    skill_index: dict = field(default_factory=dict)
    n_dropped: int = 0

    @property
    def n_questions(self):
        return len(self.question_index)

    @property
    def question_ids(self):
        return list(self.question_index)

    @property
    def students(self):
        return list(dict.fromkeys(it.student_id for it in self.interactions))

    def by_student(self):
        groups = {}
        for it in self.interactions:
            groups.setdefault(it.student_id, []).append(it)
        return groups

    def subset(self, student_ids):
        keep = set(student_ids)
        return InteractionLog([it for it in self.interactions if it.student_id in keep],
                              self.question_index, self.skill_index)

    def accuracy(self):
        return float(np.mean([it.correct for it in self.interactions]))


def _is_null(value):
    return value is None or value.strip().lower() in NULL_TOKENS


def _parse_correct(raw, lineno):
    try:
        v = float(raw)
    except ValueError:
        raise DataError(f"line {lineno}: correct={raw!r} is not 0/1") from None
    if v not in (0.0, 1.0):
        raise DataError(f"line {lineno}: correct={raw!r} is not 0/1")
    return int(v)


def ingest(path, format="csv", question_index=None):
    """Read an interaction CSV.

    Rows with a null in a required column are dropped and counted in
    ``n_dropped``. Question and skill indices are assigned densely in order of
    first appearance unless ``question_index`` is given, in which case rows
    naming unknown questions are dropped too.
    """
    if format != "csv":
        raise FormatError(f"unsupported interaction format {format!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing required column(s) {missing}")
        has_ts = "timestamp" in header
        has_skills = "skills" in header
        records, dropped = [], 0
        for lineno, row in enumerate(reader, start=2):
            if any(_is_null(row.get(c)) for c in REQUIRED_COLUMNS):
                dropped += 1
                continue
            ts = None
            if has_ts and not _is_null(row["timestamp"]):
                try:
                    ts = int(float(row["timestamp"]))
                except ValueError:
                    raise DataError(f"line {lineno}: bad timestamp {row['timestamp']!r}") from None
            skills = None
            if has_skills and not _is_null(row["skills"]):
                skills = tuple(s.strip() for s in row["skills"].split(";") if s.strip())
            records.append(Interaction(row["student_id"].strip(), row["question_id"].strip(),
                                       _parse_correct(row["correct"], lineno), ts, skills or None))
    if question_index is not None:
        kept = [r for r in records if r.question_id in question_index]
        dropped += len(records) - len(kept)
        records = kept
    if not records:
        raise DataError(f"{path}: no usable interactions")
    log = build_log(records, question_index)
    log.n_dropped = dropped
    return log


def build_log(records, question_index=None):
    """Group, order and index a list of :class:`Interaction` records."""
    groups = {}
    for pos, r in enumerate(records):
        groups.setdefault(r.student_id, []).append((pos, r))
    ordered = []
    for items in groups.values():
        # timestamp first, file order breaks ties; missing timestamps sort last
        items.sort(key=lambda pr: (pr[1].timestamp is None, pr[1].timestamp or 0, pr[0]))
        ordered.extend(r for _, r in items)
    if question_index is None:
        question_index = {}
        for r in records:
            if r.question_id not in question_index:
                question_index[r.question_id] = len(question_index) + 1
    skill_index = {}
    for r in records:
        for s in r.expert_skills or ():
            if s not in skill_index:
                skill_index[s] = len(skill_index)
    return InteractionLog(ordered, dict(question_index), skill_index)


def write_interactions(log, path, header=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh, lineterminator="\n")
        with_skills = any(it.expert_skills for it in log.interactions)
        cols = ["student_id", "question_id", "correct", "timestamp"] + (["skills"] if with_skills else [])
        w.writerow(cols)
        for it in log.interactions:
            row = [it.student_id, it.question_id, it.correct, "" if it.timestamp is None else it.timestamp]
            if with_skills:
                row.append(";".join(it.expert_skills or ()))
            w.writerow(row)


# -- sequences ---------------------------------------------------------------

@dataclass
class StudentSequence:
    """One fixed-length slice; ``mask`` is False on padded tail positions."""
    student_id: str
    questions: np.ndarray
    responses: np.ndarray
    mask: np.ndarray

    @property
    def length(self):
        return int(self.mask.sum())


def slice_sequences(log, slice_length=200):
    if slice_length < 2:
        raise ConfigError("slice_length must be at least 2")
    out = []
    for sid, items in log.by_student().items():
        q = np.array([log.question_index[it.question_id] for it in items], dtype=np.int64)
        r = np.array([it.correct for it in items], dtype=np.int64)
        for start in range(0, len(items), slice_length):
            qs, rs = q[start:start + slice_length], r[start:start + slice_length]
            n = len(qs)
            pad = slice_length - n
            out.append(StudentSequence(
                sid,
                np.concatenate([qs, np.full(pad, PAD, dtype=np.int64)]),
                np.concatenate([rs, np.zeros(pad, dtype=np.int64)]),
                np.concatenate([np.ones(n, bool), np.zeros(pad, bool)]),
            ))
    return out


@dataclass
class Batch:
    questions: np.ndarray   # (B, l) int
    responses: np.ndarray   # (B, l) int
    mask: np.ndarray        # (B, l) bool

    @property
    def size(self):
        return self.questions.shape[0]


def make_batch(sequences):
    return Batch(np.stack([s.questions for s in sequences]),
                 np.stack([s.responses for s in sequences]),
                 np.stack([s.mask for s in sequences]))


# -- folds -------------------------------------------------------------------

@dataclass
class FoldSplit:
    experiment: int
    train: list
    validation: list
    test: list
    folds: list

    def roles(self):
        return {"train": self.train, "validation": self.validation, "test": self.test}


def kfold(students, k=5, seed=0):
    """Shuffle students and rotate test/validation folds over ``k`` experiments.

    Experiment ``i`` tests on fold ``i``, validates on fold ``(i + 1) % k`` and
    trains on the rest.
    """
    ids = students.students if isinstance(students, InteractionLog) else list(students)
    if k < 3:
        raise ConfigError("k-fold needs k >= 3 (train, validation and test roles)")
    if len(ids) < k:
        raise ConfigError(f"{len(ids)} students cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    folds = [[ids[i] for i in part] for part in np.array_split(order, k)]
    splits = []
    for i in range(k):
        v = (i + 1) % k
        train = [s for j, f in enumerate(folds) if j not in (i, v) for s in f]
        splits.append(FoldSplit(i, train, list(folds[v]), list(folds[i]), folds))
    return splits


# -- synthetic data ----------------------------------------------------------

@dataclass
class SyntheticSpec:
    n_skills: int = 5
    n_questions: int = 50
    n_students: int = 300
    interactions_per_student: int = 100
    slip: float = 0.1
    guess: float = 0.1
    p_master: float = 0.5
    learn_rate: float = 0.0
    max_skills_per_question: int = 2
    seed: int = 0

    def validate(self):
        if self.n_skills < 1 or self.n_questions < 1 or self.n_students < 1:
            raise ConfigError("synthetic sizes must be positive")
        if self.interactions_per_student < 1:
            raise ConfigError("interactions_per_student must be positive")
        for name in ("slip", "guess"):
            v = getattr(self, name)
            if not 0 <= v <= 0.5:
                raise ConfigError(f"{name}={v} outside [0, 0.5]")
        for name in ("p_master", "learn_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if not 1 <= self.max_skills_per_question <= self.n_skills:
            raise ConfigError("max_skills_per_question must lie in [1, n_skills]")
        return self

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


def generate_synthetic(spec):
    """DINA responses from a random ground-truth q-matrix.

    Each question requires 1..``max_skills_per_question`` distinct skills.
    A response is correct with probability ``1 - slip`` when every required
    skill is mastered and ``guess`` otherwise. With ``learn_rate > 0`` each
    required, unmastered skill is acquired after an attempt with that
    probability.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, m = spec.n_skills, spec.n_questions
    q = np.zeros((n, m), dtype=np.uint8)
    for j in range(m):
        k = rng.integers(1, spec.max_skills_per_question + 1)
        q[rng.choice(n, size=k, replace=False), j] = 1
    required = q.T.astype(bool)                      # (M, N)
    mastery = rng.random((spec.n_students, n)) < spec.p_master
    served = rng.integers(0, m, size=(spec.n_students, spec.interactions_per_student))
    draws = rng.random(served.shape)
    correct = np.zeros(served.shape, dtype=np.int64)
    if spec.learn_rate == 0:
        lacking = required[served] & ~mastery[:, None, :]
        xi = ~lacking.any(axis=-1)
        correct = (draws < np.where(xi, 1 - spec.slip, spec.guess)).astype(np.int64)
    else:
        learn_draws = rng.random((*served.shape, n))
        for t in range(served.shape[1]):
            req = required[served[:, t]]
            xi = ~(req & ~mastery).any(axis=-1)
            correct[:, t] = draws[:, t] < np.where(xi, 1 - spec.slip, spec.guess)
            mastery |= req & (learn_draws[:, t] < spec.learn_rate)

    width_q, width_s = len(str(m)), len(str(spec.n_students))
    qids = [f"q{j + 1:0{width_q}d}" for j in range(m)]
    records = [
        Interaction(f"s{s + 1:0{width_s}d}", qids[served[s, t]], int(correct[s, t]), t)
        for s in range(spec.n_students) for t in range(served.shape[1])
    ]
    log = build_log(records, {qid: j + 1 for j, qid in enumerate(qids)})
    return log, QMatrix(q, qids, [f"c{i + 1}" for i in range(n)])
