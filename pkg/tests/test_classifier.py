import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.linear_model import LogisticRegression

from padspace.classifier import (
    EMBED_DIM, EmotionClassifier, MlpModel, TrainConfig, classify, embed, evaluate_accuracy,
    init_params, loss_and_grads, softmax, train_classifier,
)
from padspace.corpus import LabelRegistry
from padspace.exceptions import ConvergenceError, DataError

from _data import three_clusters


def numeric_grad(params, X, y, name, eps=1e-4, entries=None):
    flat = params[name].reshape(-1)
    idx = np.arange(flat.size) if entries is None else entries
    out = np.zeros(idx.size)
    for n, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        up = loss_and_grads(params, X, y)[0]
        flat[i] = old - eps
        down = loss_and_grads(params, X, y)[0]
        flat[i] = old
        out[n] = (up - down) / (2 * eps)
    return idx, out


def gradient_check(seed=0):
    """Max relative error between analytic and central-difference gradients, per tensor."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(5, 6))
    y = np.array([0, 1, 2, 1, 0])
    params = init_params(6, 3, rng)
    params["W3"] = rng.normal(0, 0.3, params["W3"].shape)
    params["b3"] = rng.normal(0, 0.1, 3)
    params["b1"] = rng.normal(0, 0.1, params["b1"].shape)
    params["b2"] = rng.normal(0, 0.1, params["b2"].shape)
    _, grads = loss_and_grads(params, X, y)
    errors = {}
    for name, g in grads.items():
        entries = None
        if g.size > 4000:
            entries = np.random.default_rng(1).choice(g.size, 4000, replace=False)
        idx, num = numeric_grad(params, X, y, name, entries=entries)
        ana = g.reshape(-1)[idx]
        errors[name] = np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
    return errors


@pytest.fixture(scope="module")
def clusters():
    return three_clusters(seed=7)


@pytest.fixture(scope="module")
def trained(clusters):
    Xtr, ytr, _, _, _ = clusters
    return train_classifier(Xtr, ytr, TrainConfig(seed=7))


class TestGradients:
    def test_central_differences(self):
        for name, err in gradient_check().items():
            assert err <= 1e-3, name

    def test_loss_is_cross_entropy(self):
        p = init_params(4, 3, np.random.default_rng(0))
        loss, _ = loss_and_grads(p, np.ones((2, 4)), np.array([0, 2]))
        assert loss == pytest.approx(np.log(3))  # zero head -> uniform


class TestTraining:
    def test_three_clusters_accuracy(self, clusters, trained):
        _, _, Xte, yte, _ = clusters
        assert evaluate_accuracy(trained[0], Xte, yte) >= 0.95

    def test_logistic_regression_oracle_agrees(self, clusters):
        Xtr, ytr, Xte, yte, _ = clusters
        assert LogisticRegression(max_iter=1000).fit(Xtr, ytr).score(Xte, yte) >= 0.95

    def test_untrained_is_uniform(self, clusters):
        Xtr, ytr, Xte, yte, _ = clusters
        model, trace = train_classifier(Xtr, ytr, TrainConfig(epochs=0, seed=7))
        assert trace == []
        probs = softmax(model.logits(Xte))
        np.testing.assert_allclose(probs, 1 / 3)
        assert abs(evaluate_accuracy(model, Xte, yte) - 1 / 3) <= 0.05

    def test_smoothed_loss_non_increasing(self, trained):
        trace = np.array(trained[1])
        windows = trace[: trace.size // 10 * 10].reshape(-1, 10).mean(axis=1)
        assert np.all(np.diff(windows) <= 0)

    def test_seeded_determinism(self, clusters, trained):
        Xtr, ytr, _, _, _ = clusters
        again, trace = train_classifier(Xtr, ytr, TrainConfig(seed=7))
        assert trace == trained[1]
        for k, v in trained[0].params.items():
            np.testing.assert_array_equal(again.params[k], v)

    def test_duplicated_data_deterministic(self, clusters):
        Xtr, ytr, _, _, _ = clusters
        X2, y2 = np.vstack([Xtr, Xtr]), np.concatenate([ytr, ytr])
        cfg = TrainConfig(epochs=3, seed=11)
        a, ta = train_classifier(X2, y2, cfg)
        b, tb = train_classifier(X2, y2, cfg)
        assert ta == tb
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_single_class_rejected(self):
        with pytest.raises(DataError, match="2 classes"):
            train_classifier(np.zeros((4, 3)), np.zeros(4, dtype=int))

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            train_classifier(np.zeros((4, 3)), np.array([0, 1, 0]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self, clusters):
        Xtr, ytr, _, _, _ = clusters
        with pytest.raises(ConvergenceError, match="epoch"):
            train_classifier(Xtr * 1e150, ytr, TrainConfig(epochs=3, learning_rate=1e150, seed=0))

    @pytest.mark.parametrize("kw", [{"epochs": -1}, {"batch_size": 0}, {"learning_rate": 0.0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_default_hyperparameters(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (100, 64, 1e-4)
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)


class TestEmbedClassify:
    def test_embedding_shape_and_determinism(self, clusters, trained):
        x = clusters[2][0]
        a, b = embed(trained[0], x), embed(trained[0], x)
        assert a.shape == (EMBED_DIM,)
        np.testing.assert_array_equal(a, b)

    def test_zero_weight_model_returns_bias(self):
        p = init_params(3, 2, np.random.default_rng(0))
        for k in p:
            p[k] = np.zeros_like(p[k])
        p["b2"] = np.arange(EMBED_DIM, dtype=float)
        model = MlpModel(p, LabelRegistry(["a", "b"]), np.zeros(3), np.ones(3))
        np.testing.assert_array_equal(embed(model, np.array([1.0, -2.0, 3.0])), p["b2"])

    def test_same_cluster_embeddings_align(self, clusters, trained):
        Xte, yte = clusters[2], clusters[3]
        a, b = Xte[yte == 1][:2]
        ea, eb = embed(trained[0], a), embed(trained[0], b)
        cos = ea @ eb / (np.linalg.norm(ea) * np.linalg.norm(eb))
        assert cos > 0.9

    def test_probabilities_sum_to_one(self, trained):
        rng = np.random.default_rng(3)
        for x in rng.normal(0, 3, (20, 8)):
            _, probs = classify(trained[0], x)
            assert probs.sum() == pytest.approx(1.0, abs=1e-6)

    def test_cluster_center_confident(self, clusters, trained):
        for label, center in enumerate(clusters[4]):
            pred, probs = classify(trained[0], center)
            assert pred == str(label)
            assert probs[label] >= 0.9

    def test_tie_goes_to_lowest_id(self):
        p = init_params(2, 3, np.random.default_rng(0))  # zero head -> exact tie
        model = MlpModel(p, LabelRegistry(["x", "y", "z"]), np.zeros(2), np.ones(2))
        assert classify(model, np.array([0.3, -0.7]))[0] == "x"

    def test_dimension_mismatch(self, trained):
        with pytest.raises(DataError, match="dimension"):
            embed(trained[0], np.zeros(5))

    @settings(max_examples=50, deadline=None)
    @given(shift=st.floats(-1e3, 1e3), seed=st.integers(0, 1000))
    def test_softmax_shift_invariance(self, shift, seed):
        logits = np.random.default_rng(seed).normal(size=(3, 5))
        np.testing.assert_allclose(softmax(logits + shift), softmax(logits), atol=1e-12)


class TestAccuracy:
    def test_constant_predictor_on_balanced_set(self):
        p = init_params(2, 2, np.random.default_rng(0))
        model = MlpModel(p, LabelRegistry(["a", "b"]), np.zeros(2), np.ones(2))
        X = np.random.default_rng(1).normal(size=(10, 2))
        assert evaluate_accuracy(model, X, np.array([0, 1] * 5)) == 0.5

    def test_perfect_model(self, clusters, trained):
        Xtr, ytr = clusters[0], clusters[1]
        pred = np.argmax(trained[0].logits(Xtr), axis=1)
        assert evaluate_accuracy(trained[0], Xtr, pred) == 1.0

    def test_empty_set(self, trained):
        with pytest.raises(DataError, match="empty"):
            evaluate_accuracy(trained[0], np.zeros((0, 8)), np.array([]))


class TestEstimatorAndSerialization:
    def test_sklearn_api(self, clusters):
        Xtr, ytr, Xte, yte, _ = clusters
        names = np.array(["Angry", "Happy", "Sad"])
        est = EmotionClassifier(epochs=30, seed=7)
        assert clone(est).get_params() == est.get_params()
        est.fit(Xtr * 10 + 3, names[ytr])
        assert list(est.classes_) == ["Angry", "Happy", "Sad"]
        assert est.score(Xte * 10 + 3, names[yte]) >= 0.95
        assert est.transform(Xte).shape == (Xte.shape[0], EMBED_DIM)

    def test_json_round_trip(self, tmp_path, trained):
        model = trained[0]
        model.save(tmp_path / "model.json")
        back = MlpModel.load(tmp_path / "model.json")
        assert back.registry == model.registry
        for k, v in model.params.items():
            np.testing.assert_array_equal(back.params[k], v)
        doc = (tmp_path / "model.json").read_text()
        assert '"schema_version": 1' in doc
