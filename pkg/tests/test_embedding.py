import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qakt import autodiff as ad
from qakt.config import RunConfig
from qakt.embedding import (
    encode_batch, encode_question, encode_response, relevance, skill_encoding, skill_tags, tag_table,
)
from qakt.errors import DataError
from qakt.model import QAKTModel


@pytest.fixture
def cfg():
    return RunConfig(n_skills=4, n_questions=5, dim=8, n_heads=2, precision="float64")


@pytest.fixture
def model(cfg):
    return QAKTModel(cfg, seed=3)


@pytest.fixture
def frozen(cfg, example_q):
    return QAKTModel(cfg, seed=3, frozen_qmatrix=example_q)


class TestRelevance:
    def test_zero_logits_give_half(self, model):
        model.params["W_p"].data[...] = 0.0
        np.testing.assert_array_equal(relevance(model.params).data, 0.5)

    def test_frozen_returned_verbatim(self, frozen, example_q):
        np.testing.assert_array_equal(relevance(frozen.params, frozen.frozen_q).data, example_q)

    def test_gradient_flows_only_in_trainable_mode(self, model, frozen):
        relevance(model.params).sum().backward()
        assert model.params["W_p"].grad is not None
        out = relevance(frozen.params, frozen.frozen_q)
        assert not out.requires_grad
        assert "W_p" not in frozen.params


class TestSkillTags:
    def test_example_q_column(self, frozen):
        table = tag_table(frozen.params, frozen.frozen_q)
        np.testing.assert_array_equal(skill_tags(table, np.array(3)).data, [0, 0, 1, 1])

    def test_one_hot_picks_column(self, model):
        P = relevance(model.params).data
        table = tag_table(model.params)
        for q in range(1, 6):
            np.testing.assert_array_equal(skill_tags(table, np.array(q)).data, P[:, q - 1])

    def test_padding_row_is_trainable_in_both_modes(self, model, frozen):
        for m in (model, frozen):
            table = tag_table(m.params, m.frozen_q)
            skill_tags(table, np.array([0])).sum().backward()
            assert np.any(m.params["w_pad"].grad != 0)

    def test_out_of_range(self, model):
        with pytest.raises(IndexError):
            skill_tags(tag_table(model.params), np.array([6]))

    def test_frozen_tags_binary(self, frozen):
        table = tag_table(frozen.params, frozen.frozen_q)
        tags = skill_tags(table, np.arange(1, 6)).data
        assert set(np.unique(tags)) <= {0.0, 1.0}


class TestSkillEncoding:
    def _E(self, rng, nonneg=False):
        E = rng.normal(size=(6, 3))
        return ad.Tensor(np.abs(E) if nonneg else E), ad.Tensor(np.zeros(6))

    def test_single_skill_reduction(self, rng):
        E, d = self._E(rng, nonneg=True)
        k = skill_encoding(ad.Tensor([0.0, 1.0, 0.0]), E, d)
        np.testing.assert_allclose(k.data, E.data[:, 1])

    def test_zero_vector_under_guard(self, rng):
        E, d = self._E(rng)
        k = skill_encoding(ad.Tensor(np.zeros(3)), E, d)
        np.testing.assert_array_equal(k.data, 0.0)
        assert np.all(np.isfinite(k.data))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 5.0))
    def test_scale_invariance_with_inactive_relu(self, seed, scale):
        r = np.random.default_rng(seed)
        E, d = self._E(r, nonneg=True)
        c = r.uniform(0.05, 1.0, 3)
        a = skill_encoding(ad.Tensor(c), E, d).data
        b = skill_encoding(ad.Tensor(scale * c), E, d).data
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_ablations_change_output(self, rng):
        E = ad.Tensor(rng.normal(size=(6, 3)))
        d = ad.Tensor(rng.normal(size=6))
        c = ad.Tensor([1.0, 1.0, 0.0])
        base = skill_encoding(c, E, d).data
        assert not np.allclose(base, skill_encoding(c, E, d, no_avg=True).data)
        pre = E.data @ c.data + d.data
        assert np.any(pre < 0)
        assert not np.allclose(base, skill_encoding(c, E, d, no_act=True).data)
        np.testing.assert_allclose(skill_encoding(c, E, d, True, True).data, pre)


class TestQuestionEncoding:
    def test_pre_affine_mean_zero(self, model, cfg):
        x = encode_question(2, model.params, cfg)
        assert abs(x.mean()) < 1e-6

    def test_no_ln_is_plain_sum(self, cfg):
        cfg = cfg.updated(no_ln=True)
        m = QAKTModel(cfg, seed=1)
        m.params["u"].data[2] = 0.3
        table = tag_table(m.params)
        k = skill_encoding(skill_tags(table, np.array(2)), m.params["E"], m.params["d"]).data
        np.testing.assert_allclose(encode_question(2, m.params, cfg), k + 0.3)

    def test_difficulty_shift_cancelled_by_layer_norm(self, model, cfg):
        before = encode_question(2, model.params, cfg)
        model.params["u"].data[2] = 0.7
        np.testing.assert_allclose(encode_question(2, model.params, cfg), before, atol=1e-12)

    def test_difficulty_visible_without_layer_norm(self, cfg):
        cfg = cfg.updated(no_ln=True)
        m = QAKTModel(cfg, seed=1)
        before = encode_question(2, m.params, cfg)
        m.params["u"].data[2] = 0.7
        assert not np.allclose(encode_question(2, m.params, cfg), before)

    def test_shared_tags_same_difficulty_equal(self, frozen, cfg):
        # questions 3 and 4 of the example q-matrix differ; inject a copy so 1 and 2 share tags
        q = frozen.frozen_q.copy()
        q[:, 1] = q[:, 0]
        m = QAKTModel(cfg, seed=3, frozen_qmatrix=q)
        np.testing.assert_array_equal(encode_question(1, m.params, cfg, m.frozen_q),
                                      encode_question(2, m.params, cfg, m.frozen_q))


class TestResponseEncoding:
    def _halves(self, m, cfg, q, r):
        cfg = cfg.updated(no_ln=True)
        y = encode_response(q, r, m.params, cfg, m.frozen_q)
        return y[: cfg.dim], y[cfg.dim:]

    def test_active_half_uses_question_inactive_uses_padding(self, frozen, cfg):
        m = frozen
        table = tag_table(m.params, m.frozen_q)
        enc = lambda q: skill_encoding(skill_tags(table, np.array(q)), m.params["E"], m.params["d"]).data
        pos, neg = self._halves(m, cfg, 3, 1)
        np.testing.assert_allclose(pos, enc(3))
        np.testing.assert_allclose(neg, enc(0))

    def test_halves_swap_with_response(self, frozen, cfg):
        pos1, neg1 = self._halves(frozen, cfg, 2, 1)
        pos0, neg0 = self._halves(frozen, cfg, 2, 0)
        np.testing.assert_array_equal(pos1, neg0)
        np.testing.assert_array_equal(neg1, pos0)

    def test_pre_affine_mean_zero(self, model, cfg):
        assert abs(encode_response(1, 1, model.params, cfg).mean()) < 1e-6

    def test_invalid_response(self, model, cfg):
        with pytest.raises(DataError):
            encode_response(1, 2, model.params, cfg)

    def test_mu_active_half_only_flag(self, cfg):
        cfg = cfg.updated(no_ln=True, mu_both_halves=False)
        m = QAKTModel(cfg, seed=1)
        m.params["u"].data[2] = 0.5
        base = cfg.updated(mu_both_halves=True)
        y_one = encode_response(2, 1, m.params, cfg)
        y_both = encode_response(2, 1, m.params, base)
        np.testing.assert_allclose(y_one[: cfg.dim], y_both[: cfg.dim])
        np.testing.assert_allclose(y_one[cfg.dim:] + 0.5, y_both[cfg.dim:])

    def test_per_half_norm(self, model, cfg):
        y = encode_response(2, 1, model.params, cfg.updated(response_norm="per-half"))
        assert abs(y[: cfg.dim].mean()) < 1e-6
        assert abs(y[cfg.dim:].mean()) < 1e-6


class TestEncodeBatch:
    def test_shapes_single_position(self, model, cfg):
        enc = encode_batch([[1]], [[1]], [[True]], model.params, cfg)
        assert enc.X.shape == (1, 1, 8)
        assert enc.Y.shape == (1, 1, 16)

    def test_eval_deterministic(self, model, cfg, rng):
        q = rng.integers(1, 6, (2, 5))
        r = rng.integers(0, 2, (2, 5))
        a = encode_batch(q, r, np.ones_like(q, bool), model.params, cfg)
        b = encode_batch(q, r, np.ones_like(q, bool), model.params, cfg)
        np.testing.assert_array_equal(a.X.data, b.X.data)

    def test_training_dropout_changes_output(self, model, cfg, rng):
        q = rng.integers(1, 6, (2, 5))
        r = rng.integers(0, 2, (2, 5))
        m = np.ones_like(q, bool)
        a = encode_batch(q, r, m, model.params, cfg, training=True, rng=np.random.default_rng(0),
                         exercise_dropout=0.5)
        b = encode_batch(q, r, m, model.params, cfg)
        assert not np.allclose(a.X.data, b.X.data)

    def test_column_locality(self, model, cfg, rng):
        q = rng.integers(1, 6, (1, 6))
        r = rng.integers(0, 2, (1, 6))
        m = np.ones_like(q, bool)
        base = encode_batch(q, r, m, model.params, cfg)
        q2, r2 = q.copy(), r.copy()
        q2[0, 3] = q[0, 3] % 5 + 1
        r2[0, 3] = 1 - r[0, 3]
        alt = encode_batch(q2, r2, m, model.params, cfg)
        keep = [0, 1, 2, 4, 5]
        np.testing.assert_array_equal(base.X.data[0, keep], alt.X.data[0, keep])
        np.testing.assert_array_equal(base.Y.data[0, keep], alt.Y.data[0, keep])
        assert not np.allclose(base.Y.data[0, 3], alt.Y.data[0, 3])

    def test_padding_positions_encoded_but_masked(self, model, cfg):
        enc = encode_batch([[2, 0]], [[1, 0]], [[True, False]], model.params, cfg)
        assert np.all(np.isfinite(enc.X.data))
        assert enc.mask.tolist() == [[True, False]]
