"""Anchored, label-supervised fuzzy-graph layout into pleasure-arousal-dominance space.

The pipeline is: exact kNN graph over the 128-d emotion embeddings, per-point
fuzzy membership calibration, probabilistic-union symmetrization, label
supervision that damps cross-class edges, and stochastic cross-entropy
layout optimization started from the Table-of-anchors positions of each
clip's emotion category.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConvergenceError, DataError

log = logging.getLogger(__name__)

PAD_AXES = ("P", "A", "D")

# Russell & Mehrabian pleasure/arousal/dominance ratings of emotion terms.
DEFAULT_ANCHORS = {
    "Angry": (-0.51, 0.59, 0.25),
    "Happy": (0.81, 0.51, 0.46),
    "Sad": (-0.63, -0.27, -0.33),
    "Surprise": (0.40, 0.67, -0.13),
    "Anxious": (0.01, 0.59, -0.15),
    "Excited": (0.62, 0.75, 0.38),
    "Alert": (0.49, 0.57, 0.45),
    "Protected": (0.60, -0.22, -0.40),
    "Relaxed": (0.68, -0.46, 0.20),
    "Neutral": (0.00, 0.00, 0.00),
}


class AnchorTable:
    """Emotion label -> fixed (P, A, D) anchor."""

    def __init__(self, anchors=None):
        src = DEFAULT_ANCHORS if anchors is None else anchors
        self._rows = {}
        for label, pad in src.items():
            v = np.array(pad, dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)) or np.any(np.abs(v) > 1):
                raise DataError(f"anchor for {label!r} must be three finite values in [-1, 1]")
            self._rows[label] = v

    @property
    def labels(self):
        return list(self._rows)

    def __contains__(self, label):
        return label in self._rows

    def __len__(self):
        return len(self._rows)

    def __getitem__(self, label) -> np.ndarray:
        try:
            return self._rows[label].copy()
        except KeyError:
            raise DataError(
                f"no anchor for label {label!r}; available: {', '.join(self._rows)}"
            ) from None

    def items(self):
        return ((k, v.copy()) for k, v in self._rows.items())

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", *PAD_AXES])
            for label, v in self._rows.items():
                w.writerow([label] + [f"{x:.6g}" for x in v])

    @classmethod
    def from_csv(cls, path) -> "AnchorTable":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"anchor file not found: {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["label", *PAD_AXES]:
            raise DataError(f"{path}: header must be label,P,A,D")
        anchors = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 4:
                raise DataError(f"{path}: expected 4 columns at line {lineno}")
            try:
                anchors[row[0]] = tuple(float(v) for v in row[1:])
            except ValueError:
                raise DataError(f"{path}: non-numeric anchor at line {lineno}") from None
        return cls(anchors)


@dataclass(frozen=True)
class ReductionConfig:
    n_neighbors: int = 20
    min_dist: float = 0.1
    layout_lr: float = 1e-2
    anchor_noise: float = 0.01
    epochs: int = 500
    negative_sample_rate: int = 5
    supervision_weight: float = 0.5
    layout_scale: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ValueError("n_neighbors must be >= 2")
        if not self.min_dist > 0:
            raise ValueError("min_dist must be > 0")
        if not self.layout_lr > 0:
            raise ValueError("layout_lr must be > 0")
        if self.anchor_noise < 0:
            raise ValueError("anchor_noise must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.negative_sample_rate < 0:
            raise ValueError("negative_sample_rate must be >= 0")
        if not 0.0 <= self.supervision_weight <= 1.0:
            raise ValueError("supervision_weight must lie in [0, 1]")
        if not self.layout_scale > 0:
            raise ValueError("layout_scale must be > 0")


@dataclass(frozen=True)
class KnnGraph:
    indices: np.ndarray  # (N, k), ascending by distance
    distances: np.ndarray

    @property
    def k(self):
        return self.indices.shape[1]


@dataclass(frozen=True)
class Memberships:
    """Directed fuzzy memberships along kNN edges plus calibration state."""

    indices: np.ndarray
    weights: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    failed: np.ndarray


@dataclass
class EmbeddingLayout:
    coords: np.ndarray  # (N, 3) rows of (P, A, D)
    labels: list

    def centroids(self) -> dict:
        labels = np.asarray(self.labels)
        return {lab: self.coords[labels == lab].mean(axis=0) for lab in dict.fromkeys(self.labels)}

    def copy(self) -> "EmbeddingLayout":
        return EmbeddingLayout(self.coords.copy(), list(self.labels))

    def to_csv(self, path, clip_ids=None):
        ids = clip_ids if clip_ids is not None else [str(i) for i in range(len(self.labels))]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clip_id", "label", *PAD_AXES])
            for cid, lab, row in zip(ids, self.labels, self.coords):
                w.writerow([cid, lab] + [f"{x:.6g}" for x in row])

    @classmethod
    def from_csv(cls, path):
        """Returns ``(layout, clip_ids)``."""
        path = Path(path)
        if not path.is_file():
            raise DataError(f"layout file not found: {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["clip_id", "label", *PAD_AXES]:
            raise DataError(f"{path}: header must be clip_id,label,P,A,D")
        body = rows[1:]
        coords = np.array([[float(v) for v in r[2:5]] for r in body], dtype=float).reshape(-1, 3)
        return cls(coords, [r[1] for r in body]), [r[0] for r in body]


def build_knn(X, k: int, chunk: int = 512) -> KnnGraph:
    """Exact Euclidean k nearest neighbors, excluding self; ties go to the lower index."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n <= k:
        raise DataError(f"need more than k={k} points, got {n}")
    if not np.all(np.isfinite(X)):
        raise DataError("embeddings contain non-finite values")
    sq = np.einsum("ij,ij->i", X, X)
    # Candidates come from the fast expansion; exact distances are recomputed
    # on a widened shortlist so rounding cannot reorder the final k.
    m = min(n - 1, k + max(8, k // 2))
    idx_out = np.empty((n, k), dtype=np.int64)
    dist_out = np.empty((n, k))
    for s in range(0, n, chunk):
        rows = np.arange(s, min(s + chunk, n))
        d2 = sq[rows, None] + sq[None, :] - 2.0 * X[rows] @ X.T
        d2[np.arange(rows.size), rows] = np.inf
        cand = np.argpartition(d2, m - 1, axis=1)[:, :m]
        for r, i in enumerate(rows):
            c = cand[r]
            # widen if the shortlist boundary is tied
            cut = d2[r, c].max()
            extra = np.flatnonzero(d2[r] <= cut * (1 + 1e-9) + 1e-12)
            c = np.union1d(c, extra[extra != i])
            d = np.sqrt(np.sum((X[c] - X[i]) ** 2, axis=1))
            order = np.lexsort((c, d))[:k]
            idx_out[i] = c[order]
            dist_out[i] = d[order]
    return KnnGraph(idx_out, dist_out)


def calibrate_fuzzy(knn: KnnGraph, k: int | None = None, n_iter: int = 64,
                    bracket=(1e-8, 1e4)) -> Memberships:
    """Per-point bandwidth search so each point's memberships sum to log2(k)."""
    k = knn.k if k is None else k
    d = knn.distances
    n = d.shape[0]
    target = np.log2(k)
    rho = d[:, 0].copy()
    excess = np.maximum(d - rho[:, None], 0.0)

    lo = np.full(n, bracket[0])
    hi = np.full(n, bracket[1])
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        total = np.exp(-excess / mid[:, None]).sum(axis=1)
        too_big = total > target
        hi = np.where(too_big, mid, hi)
        lo = np.where(too_big, lo, mid)
    sigma = 0.5 * (lo + hi)
    weights = np.exp(-excess / sigma[:, None])

    failed = np.abs(weights.sum(axis=1) - target) > 1e-3
    tied = np.all(excess == 0.0, axis=1)
    zero = tied & (rho == 0.0)
    weights[tied & ~zero] = target / d.shape[1]
    weights[zero] = 1.0
    failed = (failed & ~tied) | zero
    if failed.any():
        log.warning("bandwidth search failed for %d point(s): %s",
                    failed.sum(), np.flatnonzero(failed)[:10].tolist())
    return Memberships(knn.indices, weights, rho, sigma, failed)


def symmetrize(m: Memberships) -> sp.csr_matrix:
    """Fuzzy union a + b - a*b of the directed memberships."""
    n, k = m.indices.shape
    rows = np.repeat(np.arange(n), k)
    P = sp.csr_matrix((m.weights.ravel(), (rows, m.indices.ravel())), shape=(n, n))
    PT = P.T.tocsr()
    W = (P + PT - P.multiply(PT)).tocsr()
    W.setdiag(0.0)
    W.eliminate_zeros()
    W.sort_indices()
    return W


def supervise(graph: sp.spmatrix, labels, w: float) -> sp.csr_matrix:
    """Scale cross-class edges by (1 - w); edges that reach zero are dropped."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("supervision weight must lie in [0, 1]")
    labels = list(labels)
    if len(labels) != graph.shape[0]:
        raise DataError("need one label per graph node")
    missing = [i for i, lab in enumerate(labels) if lab is None or lab == ""]
    if missing:
        raise DataError(f"unlabeled node(s): {missing[:10]}")
    _, codes = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    G = graph.tocoo(copy=True)
    cross = codes[G.row] != codes[G.col]
    G.data = np.where(cross, G.data * (1.0 - w), G.data)
    out = G.tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def init_anchored(labels, anchors: AnchorTable, noise: float, seed) -> EmbeddingLayout:
    """Each row starts at its label's anchor plus N(0, noise^2) jitter per axis."""
    labels = list(labels)
    base = np.array([anchors[lab] for lab in labels], dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    return EmbeddingLayout(base + rng.normal(0.0, noise, base.shape), labels)


def kernel(d, a, b):
    """Low-dimensional similarity 1 / (1 + a * d^(2b))."""
    return 1.0 / (1.0 + a * np.asarray(d, dtype=float) ** (2.0 * b))


def fit_kernel(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares (a, b) matching a flat-then-exponential target curve on [0, 3]."""
    if not min_dist > 0:
        raise ValueError("min_dist must be > 0")
    d = np.linspace(0.0, 3.0 * spread, 300)
    target = np.where(d <= min_dist, 1.0, np.exp(-(d - min_dist) / spread))
    try:
        (a, b), _ = curve_fit(kernel, d, target, p0=(1.0, 1.0), maxfev=10000)
    except RuntimeError as exc:
        raise ConvergenceError(f"kernel fit did not converge: {exc}") from None
    resid = float(np.max(np.abs(kernel(d, a, b) - target)))
    if not (np.isfinite(a) and np.isfinite(b) and a > 0 and b > 0):
        raise ConvergenceError(f"kernel fit failed (a={a}, b={b}, max residual {resid:.3g})")
    return float(a), float(b)


def optimize_layout(graph: sp.spmatrix, layout: EmbeddingLayout, cfg: ReductionConfig,
                    a: float | None = None, b: float | None = None,
                    seed=None) -> EmbeddingLayout:
    """Cross-entropy layout SGD with weight-proportional edge sampling.

    Every epoch each directed edge is drawn with probability weight/max
    weight. A drawn edge pulls its endpoints together and pushes its head
    away from ``negative_sample_rate`` uniformly drawn non-neighbors. Updates
    within an epoch are accumulated and applied together, which keeps the
    run deterministic for a given seed.

    Coordinates are multiplied by ``cfg.layout_scale`` for the duration of
    the optimization and divided back afterwards. The kernel expects
    neighbor distances of order ``min_dist`` to 1, while the anchors span
    barely more than one unit; without the scaling, repulsion between
    classes dominates and drags every cluster away from its anchor.
    """
    if a is None or b is None:
        a, b = fit_kernel(cfg.min_dist)
    Y = np.array(layout.coords, dtype=float) * cfg.layout_scale
    n = Y.shape[0]
    if graph.shape != (n, n):
        raise DataError(f"graph has {graph.shape[0]} nodes but layout has {n} rows")
    G = graph.tocoo()
    heads, tails, w = G.row.astype(np.int64), G.col.astype(np.int64), G.data
    if cfg.epochs == 0 or w.size == 0:
        return EmbeddingLayout(np.array(layout.coords, dtype=float), list(layout.labels))
    prob = w / w.max()
    edge_keys = np.sort(heads * n + tails)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n_neg = cfg.negative_sample_rate

    for epoch in range(cfg.epochs):
        alpha = cfg.layout_lr * (1.0 - epoch / cfg.epochs)
        active = rng.random(prob.size) < prob
        h, t = heads[active], tails[active]
        delta = np.zeros_like(Y)

        diff = Y[h] - Y[t]
        d2 = np.einsum("ij,ij->i", diff, diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            coeff = -2.0 * a * b * d2 ** (b - 1.0) / (1.0 + a * d2 ** b)
        coeff = np.where(d2 > 0, coeff, 0.0)
        g = np.clip(coeff[:, None] * diff, -4.0, 4.0) * alpha
        np.add.at(delta, h, g)
        np.add.at(delta, t, -g)

        if n_neg:
            hn = np.repeat(h, n_neg)
            tn = rng.integers(0, n, hn.size)
            keys = hn * n + tn
            pos = np.searchsorted(edge_keys, keys).clip(max=edge_keys.size - 1)
            keep = (tn != hn) & (edge_keys[pos] != keys)
            hn, tn = hn[keep], tn[keep]
            diff = Y[hn] - Y[tn]
            d2 = np.einsum("ij,ij->i", diff, diff)
            coeff = 2.0 * b / ((1e-3 + d2) * (1.0 + a * d2 ** b))
            g = np.clip(coeff[:, None] * diff, -4.0, 4.0) * alpha
            np.add.at(delta, hn, g)

        Y += delta
        bad = ~np.isfinite(Y).all(axis=1)
        if bad.any():
            raise ConvergenceError(
                f"non-finite coordinate at epoch {epoch}, node {int(np.flatnonzero(bad)[0])}"
            )
    return EmbeddingLayout(Y / cfg.layout_scale, list(layout.labels))


class AnchoredReduction(TransformerMixin, BaseEstimator):
    """Fit a 3-d PAD layout of labeled embeddings.

    Parameters mirror :class:`ReductionConfig`. After ``fit(X, y)`` the layout
    is in ``embedding_`` (one row per input) and the intermediate graph in
    ``graph_``. The reducer cannot place unseen points; use
    :class:`padspace.predictor.EdPredictor` for that.
    """

    def __init__(self, n_neighbors=20, min_dist=0.1, layout_lr=1e-2, anchor_noise=0.01,
                 epochs=500, negative_sample_rate=5, supervision_weight=0.5, layout_scale=10.0,
                 anchors=None, seed=0):
        self.n_neighbors = n_neighbors
        self.min_dist = min_dist
        self.layout_lr = layout_lr
        self.anchor_noise = anchor_noise
        self.epochs = epochs
        self.negative_sample_rate = negative_sample_rate
        self.supervision_weight = supervision_weight
        self.layout_scale = layout_scale
        self.anchors = anchors
        self.seed = seed

    def _config(self) -> ReductionConfig:
        return ReductionConfig(self.n_neighbors, self.min_dist, self.layout_lr, self.anchor_noise,
                               self.epochs, self.negative_sample_rate, self.supervision_weight,
                               self.layout_scale, self.seed)

    def fit(self, X, y):
        X = check_array(X)
        labels = [str(v) for v in y]
        if len(labels) != X.shape[0]:
            raise DataError(f"got {X.shape[0]} embeddings but {len(labels)} labels")
        cfg = self._config()
        anchors = self.anchors if self.anchors is not None else AnchorTable()
        init_seed, opt_seed = np.random.SeedSequence(cfg.seed).spawn(2)

        layout = init_anchored(labels, anchors, cfg.anchor_noise, init_seed)
        knn = build_knn(X, cfg.n_neighbors)
        self.memberships_ = calibrate_fuzzy(knn, cfg.n_neighbors)
        self.graph_ = supervise(symmetrize(self.memberships_), labels, cfg.supervision_weight)
        self.a_, self.b_ = fit_kernel(cfg.min_dist)
        self.initial_layout_ = layout
        self.layout_ = optimize_layout(self.graph_, layout, cfg, self.a_, self.b_, seed=opt_seed)
        self.embedding_ = self.layout_.coords
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).embedding_

    def transform(self, X):
        check_is_fitted(self, "embedding_")
        raise NotImplementedError(
            "the reducer has no out-of-sample mapping; use EdPredictor for new clips"
        )
