"""Emotion classifier whose second linear layer provides the 128-d embedding.

Architecture: input -> Linear(256) -> ReLU -> Linear(128) -> Linear(C) ->
softmax. The 128-d pre-activation output of the second layer is the
emotion embedding consumed by the anchored reduction stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus import LabelRegistry
from .exceptions import ConvergenceError, DataError

HIDDEN_DIM = 256
EMBED_DIM = 128
SCHEMA_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class MlpModel:
    params: dict
    registry: LabelRegistry
    mean: np.ndarray
    scale: np.ndarray
    loss_trace: list = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def n_classes(self) -> int:
        return self.params["W3"].shape[1]

    def _prepare(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.in_dim:
            raise DataError(f"feature dimension {X.shape[1]} does not match model input {self.in_dim}")
        return (X - self.mean) / self.scale, single

    def embed(self, X) -> np.ndarray:
        Z, single = self._prepare(X)
        E = _forward(self.params, Z)[2]
        return E[0] if single else E

    def logits(self, X) -> np.ndarray:
        Z, single = self._prepare(X)
        L = _forward(self.params, Z)[3]
        return L[0] if single else L

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dims": {"input": self.in_dim, "hidden": HIDDEN_DIM, "embedding": EMBED_DIM,
                     "classes": self.n_classes},
            "labels": list(self.registry.labels),
            "normalization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"unsupported model schema_version {d.get('schema_version')!r}")
        params = {k: np.array(v["values"], dtype=float).reshape(v["shape"])
                  for k, v in d["params"].items()}
        norm = d["normalization"]
        return cls(params, LabelRegistry(d["labels"]),
                   np.array(norm["mean"], dtype=float), np.array(norm["scale"], dtype=float))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MlpModel":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"model file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def init_params(in_dim: int, n_classes: int, rng: np.random.Generator) -> dict:
    # zero head: untrained model predicts uniformly
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, HIDDEN_DIM)),
        "b1": np.zeros(HIDDEN_DIM),
        "W2": rng.normal(0.0, np.sqrt(2.0 / (HIDDEN_DIM + EMBED_DIM)), (HIDDEN_DIM, EMBED_DIM)),
        "b2": np.zeros(EMBED_DIM),
        "W3": np.zeros((EMBED_DIM, n_classes)),
        "b3": np.zeros(n_classes),
    }


def _forward(p, X):
    pre1 = X @ p["W1"] + p["b1"]
    h1 = np.maximum(pre1, 0.0)
    emb = h1 @ p["W2"] + p["b2"]
    logits = emb @ p["W3"] + p["b3"]
    return pre1, h1, emb, logits


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(params: dict, X: np.ndarray, y: np.ndarray):
    """Mean softmax cross-entropy over the batch and its parameter gradients."""
    pre1, h1, emb, logits = _forward(params, X)
    n = X.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), y].mean()

    g_logits = np.exp(logp)
    g_logits[np.arange(n), y] -= 1.0
    g_logits /= n
    g_emb = g_logits @ params["W3"].T
    g_h1 = g_emb @ params["W2"].T
    g_pre1 = g_h1 * (pre1 > 0)
    grads = {
        "W3": emb.T @ g_logits, "b3": g_logits.sum(axis=0),
        "W2": h1.T @ g_emb, "b2": g_emb.sum(axis=0),
        "W1": X.T @ g_pre1, "b1": g_pre1.sum(axis=0),
    }
    return loss, grads


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train_classifier(features, labels, cfg: TrainConfig = TrainConfig(), registry=None,
                     mean=None, scale=None) -> tuple[MlpModel, list]:
    """Fit the MLP with Adam on seeded shuffled mini-batches.

    ``features`` are expected to be z-normalized already; ``mean`` and
    ``scale`` are recorded in the model so that raw vectors can be embedded
    later. Returns the model and the per-epoch mean training loss.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("features must be a nonempty 2-d array")
    if y.shape != (X.shape[0],):
        raise DataError(f"got {X.shape[0]} feature rows but {y.size} labels")
    if np.unique(y).size < 2:
        raise DataError("need >=2 classes to train")
    if not np.all(np.isfinite(X)):
        raise DataError("features contain non-finite values")
    n_classes = len(registry) if registry is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise DataError("label ids out of range")
    if registry is None:
        registry = LabelRegistry(str(i) for i in range(n_classes))

    rng = np.random.default_rng(cfg.seed)
    params = init_params(X.shape[1], n_classes, rng)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        total = 0.0
        for start in range(0, X.shape[0], cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise ConvergenceError(f"non-finite loss at epoch {epoch}")
            opt.step(params, grads)
            total += loss * idx.size
        trace.append(total / X.shape[0])

    d = X.shape[1]
    model = MlpModel(
        params, registry,
        np.zeros(d) if mean is None else np.asarray(mean, dtype=float),
        np.ones(d) if scale is None else np.asarray(scale, dtype=float),
        trace,
    )
    return model, trace


def embed(model: MlpModel, feature) -> np.ndarray:
    return model.embed(feature)


def classify(model: MlpModel, feature) -> tuple[str, np.ndarray]:
    """Most probable label (lowest id on ties) and the class probabilities."""
    probs = softmax(model.logits(np.atleast_2d(feature)))[0]
    return model.registry.label_of(int(np.argmax(probs))), probs


def evaluate_accuracy(model: MlpModel, features, labels) -> float:
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels)
    if y.size == 0:
        raise DataError("empty evaluation set")
    if y.dtype.kind in "US":
        y = model.registry.encode(y)
    pred = np.argmax(model.logits(X), axis=1)
    return float(np.mean(pred == y))


class EmotionClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`train_classifier`.

    ``fit`` z-normalizes the raw features, ``transform`` returns 128-d
    embeddings and ``predict``/``predict_proba`` give emotion labels.
    """

    def __init__(self, epochs=100, batch_size=64, learning_rate=1e-4, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        X = check_array(X)
        registry = LabelRegistry(np.asarray(y).tolist())
        scaler = StandardScaler().fit(X)
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate, seed=self.seed)
        self.model_, self.loss_curve_ = train_classifier(
            scaler.transform(X), registry.encode(np.asarray(y).tolist()), cfg,
            registry=registry, mean=scaler.mean_, scale=scaler.scale_,
        )
        self.classes_ = np.array(registry.labels)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: MlpModel) -> "EmotionClassifier":
        est = cls()
        est.model_ = model
        est.loss_curve_ = list(model.loss_trace)
        est.classes_ = np.array(model.registry.labels)
        est.n_features_in_ = model.in_dim
        return est

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.embed(check_array(X))

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return softmax(self.model_.logits(check_array(X)))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
