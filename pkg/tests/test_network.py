"""Head semantics and model file round-trips."""

import numpy as np
import pytest

from icnet import network as N
from icnet import tensor as T
from icnet.seeding import rng

SPEC_2D = [T.dense(2, 16), T.leaky(), T.dense(16, 16), T.leaky()]


def make_binary(seed=0):
    return N.init_binary(SPEC_2D, (2,), rng(seed, 1))


def make_multiclass(seed=0, k=3):
    return N.init_multiclass(SPEC_2D, (2,), k, rng(seed, 1))


class TestBinaryLogit:
    def test_zero_head_gives_zero_logit(self):
        c = make_binary()
        c.head_w = np.zeros_like(c.head_w)
        c.head_b = np.zeros_like(c.head_b)
        x = rng(1, 6).standard_normal((5, 2))
        np.testing.assert_array_equal(N.logit_binary(c, x), np.zeros(5))

    def test_exp_logit_is_probability_ratio(self):
        c = make_binary(3)
        x = rng(3, 6).standard_normal((8, 2))
        p = N.prob_positive(c, x)
        ratio = p / (1.0 - p)
        np.testing.assert_allclose(np.exp(N.logit_binary(c, x)), ratio, rtol=1e-12)

    def test_logit_matches_independent_dot_product(self):
        c = make_binary(4)
        x = rng(4, 6).standard_normal((6, 2))
        feats, _ = T.forward_network(c.feature_params, c.spec, x)
        want = feats @ c.head_w[:, 0] + c.head_b[0]
        np.testing.assert_allclose(N.logit_binary(c, x), want, rtol=1e-13)


class TestProbPositive:
    def test_zero_logit_is_half(self):
        c = make_binary()
        c.head_w = np.zeros_like(c.head_w)
        x = np.zeros((3, 2))
        np.testing.assert_array_equal(N.prob_positive(c, x), 0.5 * np.ones(3))

    def test_monotone_and_saturating(self):
        c = make_binary(5)
        x = rng(5, 6).standard_normal((1, 2))
        probs = []
        base_w = c.head_w.copy()
        for scale in (1.0, 5.0, 25.0, 125.0):
            c.head_w = base_w * scale
            probs.append(float(N.prob_positive(c, x)[0]))
        logit_sign = np.sign(float(N.logit_binary(c, x)[0]))
        diffs = np.diff(probs) * logit_sign
        assert np.all(diffs >= 0)
        assert probs[-1] > 0.999 or probs[-1] < 0.001

    def test_flipped_head_complements(self):
        c = make_binary(6)
        x = rng(6, 6).standard_normal((7, 2))
        p = N.prob_positive(c, x)
        c.head_w = -c.head_w
        c.head_b = -c.head_b
        q = N.prob_positive(c, x)
        np.testing.assert_allclose(p, 1.0 - q, atol=1e-12)

    def test_complement_sums_to_one_exactly(self):
        c = make_binary(7)
        x = rng(7, 6).standard_normal((9, 2))
        p = N.prob_positive(c, x)
        assert np.all((0 < p) & (p < 1))
        np.testing.assert_array_equal(p + (1.0 - p), np.ones(9))


class TestSoftmaxHead:
    def test_identical_heads_give_uniform(self):
        c = make_multiclass(8, k=4)
        c.head_w = np.tile(c.head_w[:, :1], (1, 4))
        c.head_b = np.full(4, 0.3)
        probs = N.class_probs_softmax(c, rng(8, 6).standard_normal((5, 2)))
        np.testing.assert_allclose(probs, 0.25, rtol=1e-12)

    def test_shift_invariance(self):
        c = make_multiclass(9)
        x = rng(9, 6).standard_normal((4, 2))
        before = N.class_probs_softmax(c, x)
        c.head_b = c.head_b + 13.7
        np.testing.assert_allclose(N.class_probs_softmax(c, x), before, atol=1e-12)

    def test_matches_explicit_normalization(self):
        c = make_multiclass(10)
        x = rng(10, 6).standard_normal((6, 2))
        logits = N.class_logits(c, x)
        e = np.exp(logits)
        np.testing.assert_allclose(N.class_probs_softmax(c, x),
                                   e / e.sum(axis=1, keepdims=True), rtol=1e-12)

    def test_probs_positive_and_normalized(self):
        c = make_multiclass(11, k=5)
        probs = N.class_probs_softmax(c, rng(11, 6).standard_normal((8, 2)))
        assert np.all(probs > 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


class TestPredictLabel:
    def test_dominant_head_wins(self):
        c = make_multiclass(12)
        c.head_w[:, 2] = 0.0
        c.head_b = np.array([0.0, 0.0, 50.0])
        labels = N.predict_label(c, rng(12, 6).standard_normal((6, 2)))
        np.testing.assert_array_equal(labels, np.full(6, 2))

    def test_argmax_exp_equals_argmax_logits(self):
        c = make_multiclass(13, k=4)
        x = rng(13, 6).standard_normal((10, 2))
        logits = N.class_logits(c, x)
        np.testing.assert_array_equal(N.predict_label(c, x),
                                      np.argmax(np.exp(logits), axis=1))

    def test_tie_breaks_to_lowest_index(self):
        c = make_multiclass(14)
        c.head_w = np.zeros_like(c.head_w)
        c.head_b = np.array([1.0, 1.0, 1.0])
        labels = N.predict_label(c, rng(14, 6).standard_normal((4, 2)))
        np.testing.assert_array_equal(labels, np.zeros(4))

    def test_invariant_under_increasing_transform(self):
        c = make_multiclass(15, k=4)
        x = rng(15, 6).standard_normal((12, 2))
        before = N.predict_label(c, x)
        c.head_w = 3.0 * c.head_w
        c.head_b = 3.0 * c.head_b + 0.9  # affine with positive slope
        np.testing.assert_array_equal(N.predict_label(c, x), before)

    def test_one_vs_all_uses_member_features(self):
        e = N.OneVsAllEnsemble([make_binary(20), make_binary(21), make_binary(22)])
        x = rng(20, 6).standard_normal((5, 2))
        scores = np.stack([N.logit_binary(m, x) for m in e.members], axis=1)
        np.testing.assert_array_equal(N.predict_label(e, x),
                                      np.argmax(scores, axis=1))


class TestLogitSumGraph:
    def test_scalar_matches_sum_of_logits(self):
        c = make_binary(30)
        x = rng(30, 6).standard_normal((6, 2))
        _, scalar, logits = N.logit_sum_graph(c, x)
        np.testing.assert_allclose(float(scalar.value), logits.sum(), rtol=1e-13)
        np.testing.assert_allclose(logits, N.logit_binary(c, x), rtol=1e-13)

    def test_const_params_get_no_gradients(self):
        c = make_binary(31)
        x = rng(31, 6).standard_normal((3, 2))
        record, scalar, _ = N.logit_sum_graph(c, x, trainable_params=False)
        record.backward(scalar)
        assert record.param_nodes() == []

    def test_multiclass_column_selection(self):
        c = make_multiclass(32)
        x = rng(32, 6).standard_normal((4, 2))
        _, _, logits = N.logit_sum_graph(c, x, class_index=1)
        np.testing.assert_allclose(logits, N.class_logits(c, x)[:, 1], rtol=1e-13)

    def test_missing_class_index_rejected(self):
        c = make_multiclass(33)
        with pytest.raises(ValueError):
            N.logit_sum_graph(c, np.zeros((1, 2)))


class TestSerialization:
    def test_binary_roundtrip_bitwise(self, tmp_path):
        c = make_binary(40)
        path = tmp_path / "bin.icnet"
        N.save_model(path, c)
        back = N.load_model(path)
        assert back.spec == c.spec
        for a, b in zip(c.all_params(), back.all_params()):
            assert a.tobytes() == b.tobytes()

    def test_multiclass_roundtrip_bitwise(self, tmp_path):
        c = make_multiclass(41, k=4)
        path = tmp_path / "multi.icnet"
        N.save_model(path, c)
        back = N.load_model(path)
        assert back.n_classes == 4
        for a, b in zip(c.all_params(), back.all_params()):
            assert a.tobytes() == b.tobytes()

    def test_ensemble_roundtrip_bitwise(self, tmp_path):
        e = N.OneVsAllEnsemble([make_binary(42), make_binary(43)])
        path = tmp_path / "ova.icnet"
        N.save_model(path, e)
        back = N.load_model(path)
        assert back.n_classes == 2
        for m_a, m_b in zip(e.members, back.members):
            for a, b in zip(m_a.all_params(), m_b.all_params()):
                assert a.tobytes() == b.tobytes()

    def test_roundtrip_preserves_predictions(self, tmp_path):
        c = make_multiclass(44)
        path = tmp_path / "pred.icnet"
        N.save_model(path, c)
        back = N.load_model(path)
        x = rng(44, 6).standard_normal((10, 2))
        np.testing.assert_array_equal(N.predict_label(back, x), N.predict_label(c, x))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.icnet"
        path.write_bytes(b"NOTAMODEL" + b"\x00" * 32)
        with pytest.raises(N.ModelFormatError, match="magic"):
            N.load_model(path)

    def test_truncated_file_rejected(self, tmp_path):
        c = make_binary(45)
        path = tmp_path / "trunc.icnet"
        N.save_model(path, c)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(N.ModelFormatError, match="truncated"):
            N.load_model(path)
