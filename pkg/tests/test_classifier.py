import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from gripsim.classifier import (LayoutMismatch, ModelError, SlipModel, confusion_metrics, evaluate,
                                fit_threshold_baseline, load_model, loss_and_grad, predict, predict_many,
                                predict_proba, read_evaluation_csv, save_model, train, write_evaluation_csv)
from gripsim.core import CLASSES, Label
from gripsim.features import N_FEATURES, FeatureLayout, Normalizer

LAYOUT = FeatureLayout("BioTac", 10)


def blobs(seed=0, per_class=60, spread=0.3):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 4, (3, N_FEATURES))
    X = np.concatenate([c + spread * rng.standard_normal((per_class, N_FEATURES)) for c in centers])
    y = np.repeat(np.arange(3), per_class)
    return X, y


def zero_model(layout=LAYOUT):
    norm = Normalizer((0.0,) * N_FEATURES, (1.0,) * N_FEATURES)
    return SlipModel(np.zeros((3, N_FEATURES)), np.zeros(3), norm, layout, 3)


class TestTrain:
    def test_separable_blobs(self):
        X, y = blobs()
        assert oracles.nearest_centroid_accuracy(X, y) == 1.0
        model = train(X, y, LAYOUT, 3)
        assert np.mean(predict_many(model, X) == y) >= 0.99

    def test_missing_class(self):
        X, _ = blobs()
        with pytest.raises(ModelError, match="no examples"):
            train(X, ["contact"] * len(X), LAYOUT, 3)

    def test_non_finite(self):
        X, y = blobs()
        X[3, 2] = np.nan
        with pytest.raises(ModelError, match="non-finite"):
            train(X, y, LAYOUT, 3)

    def test_wrong_width(self):
        X, y = blobs()
        with pytest.raises(LayoutMismatch):
            train(X[:, :5], y, LAYOUT, 3)

    def test_same_seed_bit_identical(self):
        X, y = blobs(1)
        a, b = train(X, y, LAYOUT, 3, seed=4), train(X, y, LAYOUT, 3, seed=4)
        assert a.weights.tobytes() == b.weights.tobytes() and a.bias.tobytes() == b.bias.tobytes()

    def test_loss_non_increasing(self):
        X, y = blobs(2, spread=2.0)
        h = np.array(train(X, y, LAYOUT, 3).loss_history)
        assert np.all(np.diff(h) <= 1e-12)

    def test_loss_non_increasing_on_campaign(self, small_model):
        h = np.array(small_model[0].loss_history)
        assert np.all(np.diff(h) <= 1e-12)

    def test_shuffle_invariance(self):
        X, y = blobs(3, spread=1.5)
        perm = np.random.default_rng(0).permutation(len(y))
        a = train(X, y, LAYOUT, 3, seed=1)
        b = train(X[perm], y[perm], LAYOUT, 3, seed=1)
        assert np.max(np.abs(a.weights - b.weights)) < 1e-9
        assert np.max(np.abs(a.bias - b.bias)) < 1e-9

    def test_accepts_label_names(self):
        X, y = blobs(4)
        a = train(X, y, LAYOUT, 3)
        b = train(X, [CLASSES[i].value for i in y], LAYOUT, 3)
        assert a == b


class TestGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_against_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 12, 4
        X = rng.standard_normal((n, d))
        y = np.concatenate([np.arange(3), rng.integers(0, 3, n - 3)])
        w = rng.uniform(0.5, 2.0, n)
        W = rng.standard_normal((3, d))
        b = rng.standard_normal(3)
        loss, gW, gb = loss_and_grad(W, b, X, y, w, 0.01)
        assert loss == pytest.approx(oracles.weighted_ce_loss(W, b, X, y, w, 0.01), rel=1e-12)
        f = lambda: oracles.weighted_ce_loss(W, b, X, y, w, 0.01)  # noqa: E731
        nW = oracles.central_difference(f, W)
        nb = oracles.central_difference(f, b)
        num = np.concatenate([nW.ravel(), nb])
        ana = np.concatenate([gW.ravel(), gb])
        assert np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-12) < 1e-5


class TestPredict:
    def test_zero_model_uniform_and_slip(self):
        label, p = predict(zero_model(), np.ones(N_FEATURES))
        np.testing.assert_array_equal(p, np.full(3, 1 / 3))
        assert label is Label.SLIP

    @given(st.lists(st.floats(-1e3, 1e3), min_size=N_FEATURES, max_size=N_FEATURES), st.integers(0, 1000))
    @settings(max_examples=100, deadline=None)
    def test_probabilities_valid(self, x, seed):
        X, y = blobs(seed % 7)
        model = train(X, y, LAYOUT, 3, epochs=20)
        _, p = predict(model, np.array(x))
        assert np.all((p >= 0) & (p <= 1)) and abs(p.sum() - 1.0) <= 1e-9

    def test_probabilities_strictly_inside_for_moderate_inputs(self):
        X, y = blobs(5)
        model = train(X, y, LAYOUT, 3, epochs=50)
        P = predict_proba(model, np.random.default_rng(0).normal(0, 3, (200, N_FEATURES)))
        assert np.all((P > 0) & (P < 1))
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)

    def test_cross_variant_refused(self):
        with pytest.raises(LayoutMismatch):
            predict(zero_model(), np.zeros(N_FEATURES), FeatureLayout("BioTacSP", 10))

    def test_wrong_length_refused(self):
        with pytest.raises(LayoutMismatch):
            predict(zero_model(), np.zeros(N_FEATURES + 1))


class TestEvaluate:
    def test_perfect(self):
        y = [0, 1, 2, 2, 1, 0]
        ev = confusion_metrics(y, y)
        assert ev.accuracy == 1.0
        assert np.array_equal(ev.confusion, np.diag([2, 2, 2]))

    def test_constant_predictor_on_balanced_set(self):
        y = [0, 1, 2] * 5
        ev = confusion_metrics(y, [1] * 15)
        assert ev.accuracy == pytest.approx(1 / 3)
        assert list(ev.confusion.sum(axis=1)) == [5, 5, 5]

    def test_empty(self):
        with pytest.raises(ModelError, match="empty"):
            confusion_metrics([], [])

    def test_metrics_from_matrix(self):
        rng = np.random.default_rng(0)
        t, p = rng.integers(0, 3, 300), rng.integers(0, 3, 300)
        ev = confusion_metrics(t, p)
        for c in range(3):
            tp = np.sum((t == c) & (p == c))
            assert ev.recall[c] == tp / np.sum(t == c)
            assert ev.precision[c] == tp / np.sum(p == c)
            assert ev.support[c] == np.sum(t == c)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        ev = confusion_metrics(rng.integers(0, 3, 100), rng.integers(0, 3, 100))
        write_evaluation_csv(ev, tmp_path / "e.csv")
        back = read_evaluation_csv(tmp_path / "e.csv")
        assert [k for k in back] == ["slip", "contact", "no_contact", "accuracy"]
        for i, c in enumerate(CLASSES):
            assert back[c.value]["precision"] == ev.precision[i]
            assert back[c.value]["recall"] == ev.recall[i]
        assert back["accuracy"]["precision"] == ev.accuracy

    def test_held_out_slip_recall(self, small_model):
        model, _, (Xt, yt) = small_model
        assert evaluate(model, Xt, yt).recall_of(Label.SLIP) >= 0.9


class TestThresholdBaseline:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        X = rng.normal(0, 1, (300, N_FEATURES))
        y = np.digitize(X[:, 0] + 0.5 * rng.standard_normal(300), [-0.5, 0.5])
        base = fit_threshold_baseline(X, y, grid=32)
        cuts = np.unique(np.quantile(X[:, 0], np.linspace(0, 1, 32)))
        best = 0
        for i, a in enumerate(cuts):
            for b in cuts[i:]:
                region = np.where(X[:, 0] <= a, 0, np.where(X[:, 0] <= b, 1, 2))
                best = max(best, sum(np.bincount(y[region == r], minlength=3).max() for r in range(3)
                                     if np.any(region == r)))
        assert np.sum(base.predict(X) == y) == best


class TestPersistence:
    def test_round_trip(self, tmp_path):
        X, y = blobs(6)
        m = train(X, y, LAYOUT, 3, epochs=30)
        save_model(m, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json") == m

    def test_predictions_preserved(self, tmp_path):
        X, y = blobs(7)
        m = train(X, y, LAYOUT, 3, epochs=30)
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        V = np.random.default_rng(0).normal(0, 4, (100, N_FEATURES))
        assert np.array_equal(predict_proba(m, V), predict_proba(back, V))

    def test_wrong_layout_version(self, tmp_path):
        save_model(zero_model(), tmp_path / "m.json")
        d = json.loads((tmp_path / "m.json").read_text())
        d["layout_version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(LayoutMismatch, match="version"):
            load_model(tmp_path / "m.json")

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(ModelError, match="cannot read"):
            load_model(tmp_path / "m.json")

    def test_truncated_weights(self, tmp_path):
        save_model(zero_model(), tmp_path / "m.json")
        d = json.loads((tmp_path / "m.json").read_text())
        d["weights"] = d["weights"][:2]
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(ModelError, match="shapes"):
            load_model(tmp_path / "m.json")

    def test_not_a_model(self, tmp_path):
        (tmp_path / "m.json").write_text("[]")
        with pytest.raises(ModelError, match="not a slip model"):
            load_model(tmp_path / "m.json")
