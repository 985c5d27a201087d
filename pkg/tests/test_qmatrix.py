import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qakt.config import RunConfig
from qakt.data import Interaction, build_log
from qakt.errors import ConfigError, DataError, FormatError
from qakt.model import QAKTModel
from qakt.qmatrix import (
    QMatrix, QMatrixWarning, agreement_matrix, best_row_assignment, expert_qmatrix_from_tags, inject,
    match_and_score, read_qmatrix, write_qmatrix,
)


def brute_f1(learned, truth):
    """Best F1 over every row permutation, scoring by total agreement first."""
    best = None
    for perm in itertools.permutations(range(truth.shape[0])):
        aligned = np.zeros_like(truth)
        aligned[list(perm)] = learned
        agree = int(np.sum(aligned == truth))
        tp = np.sum((aligned == 1) & (truth == 1))
        p = tp / max(aligned.sum(), 1)
        r = tp / max(truth.sum(), 1)
        f = 2 * p * r / (p + r) if p + r else 0.0
        if best is None or agree > best[0]:
            best = (agree, f)
    return best


class TestQMatrixIO:
    def test_example_q_round_trip(self, tmp_path, example_q):
        q = QMatrix(example_q, [f"q{j}" for j in range(1, 6)], [f"c{i}" for i in range(1, 5)])
        write_qmatrix(q, tmp_path / "t.csv")
        back = read_qmatrix(tmp_path / "t.csv")
        assert back == q
        assert back.entries.dtype == np.uint8

    def test_one_by_one(self, tmp_path):
        q = QMatrix([[1]])
        write_qmatrix(q, tmp_path / "one.csv")
        assert read_qmatrix(tmp_path / "one.csv") == q

    def test_header_comment_round_trip(self, tmp_path, example_q):
        q = QMatrix(example_q)
        write_qmatrix(q, tmp_path / "h.csv", header={"config_hash": "abc", "seed": 0})
        text = (tmp_path / "h.csv").read_text()
        assert text.startswith("# config_hash=abc\n# seed=0\n")
        assert read_qmatrix(tmp_path / "h.csv") == q

    @pytest.mark.parametrize("cell", ["0.5", "2", "", "yes"])
    def test_non_binary_entry(self, tmp_path, cell):
        (tmp_path / "b.csv").write_text(f"skill,q1,q2\nc1,1,{cell}\n")
        with pytest.raises(FormatError):
            read_qmatrix(tmp_path / "b.csv")

    def test_ragged_row(self, tmp_path):
        (tmp_path / "r.csv").write_text("skill,q1,q2\nc1,1\n")
        with pytest.raises(FormatError):
            read_qmatrix(tmp_path / "r.csv")

    def test_empty_column_warns(self, tmp_path):
        (tmp_path / "z.csv").write_text("skill,q1,q2\nc1,1,0\nc2,1,0\n")
        with pytest.warns(QMatrixWarning, match="q2"):
            q = read_qmatrix(tmp_path / "z.csv")
        assert q.empty_columns().tolist() == [1]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 9), st.integers(0, 10_000))
    def test_random_round_trip(self, tmp_path_factory, n, m, seed):
        q = QMatrix(np.random.default_rng(seed).integers(0, 2, (n, m)))
        path = tmp_path_factory.mktemp("rt") / "q.csv"
        write_qmatrix(q, path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", QMatrixWarning)
            assert read_qmatrix(path) == q

    def test_rejects_non_binary_array(self):
        with pytest.raises(DataError):
            QMatrix([[0, 2]])

    def test_reorder(self, example_q):
        q = QMatrix(example_q, ["a", "b", "c", "d", "e"])
        r = q.reorder(["e", "a"])
        np.testing.assert_array_equal(r.entries, example_q[:, [4, 0]])
        with pytest.raises(DataError):
            q.reorder(["zz"])

    def test_column_lookup(self, example_q):
        q = QMatrix(example_q, ["q1", "q2", "q3", "q4", "q5"])
        np.testing.assert_array_equal(q.column("q3"), [0, 0, 1, 1])


class TestMatchAndScore:
    def test_identity(self, example_q):
        rep = match_and_score(example_q, example_q)
        assert rep.f1 == 1.0
        assert rep.exact_match_rate == 1.0
        assert rep.method == "exhaustive"

    @pytest.mark.parametrize("perm", list(itertools.permutations(range(4)))[::5])
    def test_row_permutation_invariant(self, example_q, perm):
        rep = match_and_score(example_q[list(perm)], example_q)
        assert rep.f1 == 1.0
        shuffled = np.zeros_like(example_q)
        shuffled[rep.permutation] = example_q[list(perm)]
        np.testing.assert_array_equal(shuffled, example_q)

    def test_complement_single_skill(self):
        truth = np.array([[1, 0, 1, 1, 0]])
        assert match_and_score(1 - truth, truth).f1 == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 100_000))
    def test_matches_brute_force_4x20(self, seed):
        rng = np.random.default_rng(seed)
        a = (rng.random((4, 20)) < 0.3).astype(np.uint8)
        b = (rng.random((4, 20)) < 0.3).astype(np.uint8)
        rep = match_and_score(a, b)
        agree, f1 = brute_f1(a, b)
        assert rep.agreement == agree
        # ties in agreement may pair different F1 values; agreement is the optimised quantity
        if sum(1 for p in itertools.permutations(range(4))
               if agreement_matrix(a, b)[np.arange(4), list(p)].sum() == agree) == 1:
            assert rep.f1 == pytest.approx(f1)

    def test_symmetric_precision_recall(self, rng):
        a = (rng.random((3, 15)) < 0.4).astype(np.uint8)
        b = (rng.random((3, 15)) < 0.4).astype(np.uint8)
        ab, ba = match_and_score(a, b), match_and_score(b, a)
        assert ab.f1 == pytest.approx(ba.f1)
        assert ab.precision == pytest.approx(ba.recall)

    def test_skill_count_mismatch_pads(self, example_q):
        rep = match_and_score(example_q[:2], example_q)
        assert rep.n_skills == 4
        assert rep.precision == 1.0
        assert rep.recall < 1.0

    def test_question_count_mismatch(self, example_q):
        with pytest.raises(DataError):
            match_and_score(example_q[:, :3], example_q)

    def test_greedy_above_cutoff_reaches_identity(self):
        rng = np.random.default_rng(5)
        truth = (rng.random((12, 40)) < 0.3).astype(np.uint8)
        rep = match_and_score(truth[rng.permutation(12)], truth)
        assert rep.method == "greedy-swap"
        assert rep.f1 == 1.0

    def test_baseline_density_matched_and_seeded(self, example_q):
        a = match_and_score(example_q, example_q, seed=3)
        b = match_and_score(example_q, example_q, seed=3)
        assert a.baseline_f1 == b.baseline_f1
        assert 0 < a.baseline_f1 < 1

    def test_report_formats(self, example_q):
        rep = match_and_score(example_q, example_q)
        text = rep.to_text()
        assert "f1: 1.000000" in text
        assert "method: exhaustive" in text
        header, row = rep.to_csv().strip().split("\n")
        assert len(header.split(",")) == len(row.split(","))

    def test_best_row_assignment_agrees_with_total(self, rng):
        a = rng.integers(0, 2, (5, 12))
        b = rng.integers(0, 2, (5, 12))
        perm, total, _ = best_row_assignment(a, b)
        assert total == agreement_matrix(a, b)[np.arange(5), perm].sum()


class TestInject:
    @pytest.fixture
    def cfg(self):
        return RunConfig(n_skills=4, n_questions=5, dim=8, n_heads=2)

    def test_relevance_is_q(self, cfg, example_q):
        m = inject(QMatrix(example_q), QAKTModel(cfg, seed=0))
        assert m.qmatrix_mode == "frozen-binary"
        np.testing.assert_array_equal(m.relevance().data, example_q)

    def test_other_parameters_reinitialised(self, cfg, example_q):
        m = QAKTModel(cfg, seed=0)
        m.params["E"].data[...] = 7.0
        inject(example_q, m)
        assert not np.any(m.params["E"].data == 7.0)

    def test_wrong_m(self, cfg, example_q):
        with pytest.raises(ConfigError):
            inject(example_q[:, :4], QAKTModel(cfg, seed=0))

    def test_inject_export_inject(self, cfg, example_q, tmp_path):
        m = inject(example_q, QAKTModel(cfg, seed=0))
        write_qmatrix(QMatrix(m.frozen_q), tmp_path / "x.csv")
        m2 = inject(read_qmatrix(tmp_path / "x.csv"), QAKTModel(cfg, seed=1))
        np.testing.assert_array_equal(m2.frozen_q, example_q)


class TestExpertTags:
    def _log(self, extra=()):
        recs = [
            Interaction("s1", "q1", 1, 0, ("c2", "c3")),
            Interaction("s1", "q2", 0, 1, ("c1",)),
            Interaction("s2", "q2", 1, 0, ("c3",)),
            *extra,
        ]
        return build_log(recs)

    def test_multi_hot_column(self):
        q = expert_qmatrix_from_tags(self._log())
        assert q.skill_labels == ["c2", "c3", "c1"]
        assert q.column("q1").tolist() == [1, 1, 0]

    def test_conflicting_tags_unioned(self):
        q = expert_qmatrix_from_tags(self._log())
        assert q.column("q2").tolist() == [0, 1, 1]

    def test_untagged_question_warns(self):
        with pytest.warns(QMatrixWarning):
            q = expert_qmatrix_from_tags(self._log([Interaction("s2", "q9", 1, 1)]))
        assert q.column("q9").sum() == 0

    def test_idempotent_under_duplication(self):
        log = self._log()
        doubled = build_log(log.interactions + log.interactions)
        assert expert_qmatrix_from_tags(doubled) == expert_qmatrix_from_tags(log)

    def test_no_tags(self):
        with pytest.raises(DataError):
            expert_qmatrix_from_tags(build_log([Interaction("s", "q", 1)]))
