"""PAD inference: predict an ED vector from audio, or take one from the user."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .classifier import MlpModel
from .corpus import AudioClip
from .exceptions import DataError, NotFittedError
from .features import FeatureExtractor
from .reduction import AnchorTable, EmbeddingLayout

SCHEMA_VERSION = 1
TAU_POLICY = "mean_neighbor_distance"


class PadVector(NamedTuple):
    pleasure: float
    arousal: float
    dominance: float

    def format(self, digits: int = 2) -> str:
        return ",".join(f"{v:.{digits}f}" for v in self)


def _clamp(v) -> PadVector:
    v = np.clip(np.asarray(v, dtype=float), -1.0, 1.0) + 0.0  # drop -0.0
    return PadVector(*(float(x) for x in v))


def control_ed(spec, anchors: AnchorTable | None = None) -> PadVector:
    """Resolve a user-chosen ED: an anchor label, or a raw triple clamped to [-1, 1]."""
    anchors = anchors if anchors is not None else AnchorTable()
    if isinstance(spec, str):
        if spec not in anchors:
            raise DataError(f"unknown label {spec!r}; known labels: {', '.join(anchors.labels)}")
        return PadVector(*(float(x) for x in anchors[spec]))
    v = np.asarray(spec, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise DataError("a PAD triple needs three finite numbers")
    return _clamp(v)


class EdPredictor(RegressorMixin, BaseEstimator):
    """Out-of-sample PAD estimates by kNN interpolation in embedding space.

    ``fit(E, Y)`` stores the training embeddings and their fitted layout rows.
    A query takes its ``k_pred`` nearest training embeddings and returns the
    mean of their layout rows weighted by ``exp(-d / tau)``, where ``tau`` is
    the mean of those neighbor distances. A query that coincides with a
    training embedding (up to float rounding between batched and single-row
    forward passes) returns that row.
    """

    match_rtol = 1e-9

    def __init__(self, k_pred=10):
        self.k_pred = k_pred

    def fit(self, X, y, clip_ids=None, labels=None, model: MlpModel | None = None):
        X = check_array(X)
        y = check_array(y)
        if y.shape != (X.shape[0], 3):
            raise DataError(f"need one (P, A, D) row per embedding, got {y.shape}")
        if not 1 <= self.k_pred <= X.shape[0]:
            raise DataError(f"k_pred={self.k_pred} must lie in [1, {X.shape[0]}]")
        self.embeddings_ = X
        self.layout_ = y
        self.clip_ids_ = list(clip_ids) if clip_ids is not None else [str(i) for i in range(len(X))]
        self.labels_ = list(labels) if labels is not None else [""] * len(X)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        return self

    def neighbors(self, q):
        """Indices, distances and normalized weights for one query embedding."""
        check_is_fitted(self, "embeddings_")
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.size != self.embeddings_.shape[1]:
            raise DataError(f"query dimension {q.size} != {self.embeddings_.shape[1]}")
        d = np.sqrt(np.sum((self.embeddings_ - q) ** 2, axis=1))
        idx = np.argsort(d, kind="stable")[: self.k_pred]
        dn = d[idx]
        if dn[0] <= self.match_rtol * (1.0 + np.linalg.norm(q)):
            w = np.zeros(idx.size)
            w[0] = 1.0
            return idx, dn, w
        tau = dn.mean()
        w = np.exp(-dn / tau)
        return idx, dn, w / w.sum()

    def predict_raw(self, X) -> np.ndarray:
        """Weighted neighbor means before clamping."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], 3))
        for r, q in enumerate(X):
            idx, _, w = self.neighbors(q)
            out[r] = w @ self.layout_[idx]
        return out

    def predict(self, X) -> np.ndarray:
        return np.clip(self.predict_raw(X), -1.0, 1.0) + 0.0

    def embed_clips(self, clips) -> np.ndarray:
        if getattr(self, "model_", None) is None:
            raise NotFittedError("predictor has no classifier model for audio input")
        return self.model_.embed(FeatureExtractor().transform(clips))

    def nearest_exemplars(self, pad, n: int):
        """The ``n`` training clips closest to ``pad`` in PAD space, as (clip_id, distance)."""
        check_is_fitted(self, "layout_")
        if not 1 <= n <= len(self.layout_):
            raise DataError(f"n={n} must lie in [1, {len(self.layout_)}]")
        d = np.sqrt(np.sum((self.layout_ - np.asarray(pad, dtype=float)) ** 2, axis=1))
        order = np.argsort(d, kind="stable")[:n]
        return [(self.clip_ids_[i], float(d[i])) for i in order]

    def save(self, directory, anchors: AnchorTable | None = None):
        """Write the predictor bundle directory."""
        check_is_fitted(self, "embeddings_")
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        if self.model_ is not None:
            self.model_.save(out / "model.json")
        with open(out / "embeddings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clip_id"] + [f"e{i}" for i in range(self.embeddings_.shape[1])])
            for cid, row in zip(self.clip_ids_, self.embeddings_):
                w.writerow([cid] + [repr(float(v)) for v in row])
        EmbeddingLayout(self.layout_, self.labels_).to_csv(out / "layout.csv", self.clip_ids_)
        (anchors if anchors is not None else AnchorTable()).to_csv(out / "anchors.csv")
        meta = {"schema_version": SCHEMA_VERSION, "k_pred": int(self.k_pred), "tau": TAU_POLICY}
        (out / "predictor.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> tuple["EdPredictor", AnchorTable]:
        d = Path(directory)
        meta_path = d / "predictor.json"
        if not meta_path.is_file():
            raise DataError(f"not a predictor bundle (missing predictor.json): {d}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("schema_version") != SCHEMA_VERSION or meta.get("tau") != TAU_POLICY:
            raise DataError(f"unsupported predictor.json in {d}")
        with open(d / "embeddings.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        ids = [r[0] for r in rows]
        E = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
        layout, layout_ids = EmbeddingLayout.from_csv(d / "layout.csv")
        if layout_ids != ids:
            raise DataError(f"{d}: embeddings.csv and layout.csv disagree on clip ids")
        model = MlpModel.load(d / "model.json") if (d / "model.json").is_file() else None
        pred = cls(k_pred=meta["k_pred"]).fit(E, layout.coords, ids, layout.labels, model)
        anchors = AnchorTable.from_csv(d / "anchors.csv")
        return pred, anchors


def predict_ed(pred: EdPredictor, clip: AudioClip) -> PadVector:
    """ED prediction from a prompt clip."""
    return PadVector(*pred.predict(pred.embed_clips([clip]))[0])


def nearest_exemplars(pred: EdPredictor, pad, n: int):
    return pred.nearest_exemplars(pad, n)
