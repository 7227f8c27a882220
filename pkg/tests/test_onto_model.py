from types import SimpleNamespace

import numpy as np
import pytest

from boxkg import onto_model as om
from boxkg.geometry import EULER_GAMMA, BoxConfig, inverse_softplus, softplus
from boxkg.onto_model import MissingFeatureError, OntoParams, TextFeatureTable

from conftest import numeric_gradient_errors


def interval_params(intervals):
    """1-D concept boxes ``[lo, hi]`` under a single neutral relation."""
    iv = np.asarray(intervals, float)
    cen = iv.mean(1, keepdims=True)
    half = (iv[:, 1:] - iv[:, :1]) / 2
    return OntoParams(cen, inverse_softplus(half), np.zeros((1, 1)),
                      np.full((1, 1), om.NEUTRAL_PRE_SCALE))


def half_conditional(L, beta):
    """``[[0, x], [0, L]]`` with phi(0, 0, 1) = 0.5 under hard intersection."""
    g = EULER_GAMMA
    x = beta * (inverse_softplus(0.5 * softplus(L / beta - 2 * g)) + 2 * g)
    return interval_params([[0.0, x], [0.0, L]])


def zero_text_params(n_c, n_r, dim, width):
    p = OntoParams.init(n_c, n_r, dim, np.random.default_rng(0), "text", text_width=width)
    for v in p.proj.values():
        v[:] = 0.0
    return p


def feature_table(n_c, n_r, width, rng):
    keys = [(c, r) for c in range(n_c) for r in range(n_r)]
    return TextFeatureTable(keys, rng.normal(size=(len(keys), width)), n_r)


class TestTransform:
    def test_shift_scale_example(self):
        p = OntoParams(np.array([[1.0, 1.0]]), inverse_softplus(np.array([[1.0, 1.0]])),
                       np.array([[0.5, -0.5]]), inverse_softplus(np.array([[2.0, 0.5]])))
        box = om.transform_box(0, 0, p)
        np.testing.assert_allclose(box.center, [1.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(box.offset, [2.0, 0.5], atol=1e-12)

    def test_neutral_init_is_identity(self, rng):
        p = OntoParams.init(5, 3, 4, rng)
        for c in range(5):
            box = om.transform_box(c, 2, p)
            np.testing.assert_allclose(box.center, p.center[c], atol=1e-12)
            np.testing.assert_allclose(box.offset, softplus(p.pre_offset[c]), atol=1e-12)

    def test_text_mode_zero_weights(self, rng):
        p = zero_text_params(3, 2, 4, 5)
        box = om.transform_box(1, 1, p, features=feature_table(3, 2, 5, rng))
        np.testing.assert_allclose(box.center, 0.0)
        np.testing.assert_allclose(box.offset, np.log(2.0))

    def test_text_mode_needs_features(self, rng):
        p = zero_text_params(3, 2, 4, 5)
        with pytest.raises(MissingFeatureError):
            om.transform_box(0, 0, p)
        partial = TextFeatureTable([(0, 0)], rng.normal(size=(1, 5)), 2)
        with pytest.raises(MissingFeatureError):
            om.transform_box(0, 1, p, features=partial)

    def test_mode_mismatch_and_bad_ids(self, rng):
        p = OntoParams.init(3, 1, 2, rng)
        with pytest.raises(ValueError):
            om.transform_box(0, 0, p, mode="text")
        with pytest.raises(IndexError):
            om.transform_box(3, 0, p)
        with pytest.raises(ValueError):
            OntoParams(p.center, p.pre_offset, p.rel_shift, p.rel_pre_scale, mode="text")


class TestFeatureTable:
    def test_load(self, tmp_path):
        kg = SimpleNamespace(concepts={"A": 0, "B": 1}, onto_relations={"r": 0, "s": 1})
        path = tmp_path / "feat.tsv"
        path.write_text("A\tr\t1,2,3\nB\ts\t4,5,6\n")
        table = TextFeatureTable.load(path, kg)
        assert len(table) == 2 and table.width == 3
        np.testing.assert_array_equal(table.lookup([1, 0], [1, 0]), [[4, 5, 6], [1, 2, 3]])

    def test_load_errors(self, tmp_path):
        kg = SimpleNamespace(concepts={"A": 0}, onto_relations={"r": 0})
        for text in ("A\tr\n", "Z\tr\t1\n", "A\tr\t1\nA\tr\t2\n"):
            path = tmp_path / "feat.tsv"
            path.write_text(text)
            with pytest.raises(ValueError):
                TextFeatureTable.load(path, kg)


class TestScore:
    def test_self_is_one_hard(self, rng):
        p = OntoParams.init(4, 2, 6, rng)
        cfg = BoxConfig(dim=6, intersection="hard")
        np.testing.assert_array_equal(om.score_onto_triple([0, 1, 2, 3], [0, 1, 0, 1],
                                                           [0, 1, 2, 3], p, cfg), 1.0)

    def test_containment(self):
        p = interval_params([[0.0, 4.0], [1.0, 3.0]])
        cfg = BoxConfig(dim=1, beta=1e-3)
        assert om.score_onto_triple(0, 0, 1, p, cfg) == pytest.approx(1.0, abs=1e-3)
        assert om.score_onto_triple(1, 0, 0, p, cfg) == pytest.approx(0.5, abs=1e-3)

    def test_disjoint_small(self):
        p = interval_params([[0.0, 1.0], [5.0, 6.0]])
        cfg = BoxConfig(dim=1, beta=0.05)
        assert om.score_onto_triple(0, 0, 1, p, cfg) < 1e-10

    def test_half_conditional(self):
        cfg = BoxConfig(dim=1, beta=0.3, intersection="hard")
        assert om.score_onto_triple(0, 0, 1, half_conditional(2.0, 0.3), cfg) == pytest.approx(0.5)

    def test_translation_invariance(self, rng):
        p = OntoParams.init(6, 2, 3, rng)
        cfg = BoxConfig(dim=3)
        h, r, t = [0, 1, 2, 3], [0, 1, 1, 0], [5, 4, 3, 0]
        a = om.score_onto_triple(h, r, t, p, cfg)
        p.center += np.array([3.0, -7.0, 0.25])
        np.testing.assert_allclose(om.score_onto_triple(h, r, t, p, cfg), a, rtol=1e-12)

    def test_score_all_matches_pointwise(self, rng):
        p = OntoParams.init(5, 2, 3, rng)
        p.rel_shift[:] = rng.normal(0, 0.2, size=p.rel_shift.shape)
        cfg = BoxConfig(dim=3, beta=0.2)
        anchors, rels = np.array([0, 4]), np.array([1, 0])
        tails = om.score_all(p, anchors, rels, cfg, side="tail")
        heads = om.score_all(p, anchors, rels, cfg, side="head")
        for i in range(2):
            for c in range(5):
                assert tails[i, c] == pytest.approx(om.score_onto_triple(anchors[i], rels[i], c, p, cfg))
                assert heads[i, c] == pytest.approx(om.score_onto_triple(c, rels[i], anchors[i], p, cfg))


class TestLoss:
    def test_squared_at_half(self):
        cfg = BoxConfig(dim=1, beta=0.3, intersection="hard")
        tri = np.array([[0, 0, 1]])
        loss, _ = om.loss_onto(tri, tri, half_conditional(2.0, 0.3), cfg)
        assert loss == pytest.approx(0.5)

    def test_bce_at_half(self):
        cfg = BoxConfig(dim=1, beta=0.3, intersection="hard")
        tri = np.array([[0, 0, 1]])
        loss, _ = om.loss_onto(tri, tri, half_conditional(2.0, 0.3), cfg, loss_kind="bce")
        assert loss == pytest.approx(2 * np.log(2.0))

    def test_errors(self, rng):
        p = OntoParams.init(3, 1, 2, rng)
        cfg = BoxConfig(dim=2)
        tri = np.array([[0, 0, 1]])
        with pytest.raises(ValueError):
            om.loss_onto(tri, tri, p, cfg, loss_kind="hinge")
        with pytest.raises(ValueError):
            om.loss_onto(np.zeros((0, 3), int), np.zeros((0, 3), int), p, cfg)

    @pytest.mark.parametrize("mode", ["shift_scale", "text"])
    @pytest.mark.parametrize("loss_kind", ["squared", "bce"])
    @pytest.mark.parametrize("intersection", ["smooth", "hard"])
    def test_gradients(self, mode, loss_kind, intersection, rng):
        n_c, n_r, dim, width = 8, 3, 4, 5
        features = feature_table(n_c, n_r, width, rng) if mode == "text" else None
        p = OntoParams.init(n_c, n_r, dim, rng, mode, text_width=width)
        if mode == "shift_scale":
            p.rel_shift[:] = rng.normal(0, 0.3, size=p.rel_shift.shape)
            p.rel_pre_scale[:] += rng.normal(0, 0.3, size=p.rel_pre_scale.shape)
        cfg = BoxConfig(dim=dim, beta=0.5, intersection=intersection)
        pos = np.array([[0, 0, 1], [2, 1, 3], [4, 2, 5]])
        neg = np.array([[0, 0, 6], [7, 1, 3], [4, 2, 0]])

        def loss():
            return om.loss_onto(pos, neg, p, cfg, features, loss_kind)[0]

        _, grads = om.loss_onto(pos, neg, p, cfg, features, loss_kind)
        assert om.kink_gap(pos, neg, p, cfg, features) > 1e-4
        errs = numeric_gradient_errors(loss, p.tables(), grads, rng, n=60)
        assert errs.max() < 1e-5
