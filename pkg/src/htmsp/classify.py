"""Per-video SDR histograms, a one-vs-rest linear SVM and clustering F1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from htmsp.errors import ConfigError, InputError


@dataclass
class SdrHistogram:
    counts: np.ndarray
    label: Hashable | None = None


def accumulate_histogram(sdr_sequence: Iterable, num_columns: int, frames: int | None = None,
                         label=None) -> SdrHistogram:
    """Fraction of frames in which each column was active."""
    counts = np.zeros(num_columns, dtype=np.int64)
    seen = 0
    for active in sdr_sequence:
        idx = np.asarray(active, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= num_columns):
            raise InputError(f"active column index out of range [0, {num_columns})")
        counts[np.unique(idx)] += 1
        seen += 1
    frames = seen if frames is None else frames
    if frames < 1:
        raise InputError("histogram needs at least one frame")
    if seen > frames:
        raise InputError(f"got {seen} frames, expected at most {frames}")
    return SdrHistogram(counts / frames, label)


def bit_histogram(bits: np.ndarray, label=None) -> SdrHistogram:
    """Histogram of raw encoder bits; (frames, bits) -> per-bit frequency."""
    bits = np.asarray(bits)
    return SdrHistogram(bits.mean(axis=0, dtype=np.float64), label)


@dataclass
class LinearModel:
    weights: np.ndarray   # (K, D)
    biases: np.ndarray    # (K,)
    classes: list

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[1]:
            raise InputError(
                f"feature dimension {x.shape[-1]} does not match model dimension "
                f"{self.weights.shape[1]}")
        return x @ self.weights.T + self.biases


def _features(items) -> np.ndarray:
    return np.stack([np.asarray(h.counts if isinstance(h, SdrHistogram) else h, dtype=np.float64)
                     for h in items])


def train_classifier(features: Sequence[SdrHistogram], labels: Sequence | None = None,
                     lam: float = 1e-4, epochs: int = 50, seed: int = 0) -> LinearModel:
    """One-vs-rest hinge-loss SVMs trained with the Pegasos schedule.

    The bias is learned as the weight of a constant feature. Features are
    centered on the training mean first (and the shift folded back into the
    biases), otherwise a large common-mode component swamps the regularized
    bias and every sample lands in one class. All K binary problems share one
    seeded sample order, so training is reproducible.
    """
    if labels is None:
        labels = [h.label for h in features]
    if len(labels) != len(features):
        raise InputError("features and labels differ in length")
    dims = {np.asarray(h.counts if isinstance(h, SdrHistogram) else h).shape for h in features}
    if len(dims) != 1:
        raise InputError(f"feature dimensions differ: {sorted(dims)}")
    classes = sorted(set(labels), key=lambda c: (str(type(c)), c))
    if len(classes) < 2:
        raise ConfigError("training data must contain at least two classes")
    if lam <= 0 or epochs < 1:
        raise ConfigError("lam must be positive and epochs >= 1")

    X = _features(features)
    mean = X.mean(axis=0)
    X = X - mean
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    index = {c: k for k, c in enumerate(classes)}
    Y = -np.ones((n, len(classes)))
    Y[np.arange(n), [index[y] for y in labels]] = 1.0

    # w = scale * v keeps the per-step shrink O(1).
    v = np.zeros((len(classes), d + 1))
    scale = 1.0
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            x, y = Xa[i], Y[i]
            margin = y * (scale * (v @ x))
            scale *= 1.0 - eta * lam
            if scale == 0.0:  # first step: eta * lam == 1
                v[:] = 0.0
                scale = 1.0
            viol = margin < 1.0
            if viol.any():
                v[viol] += (eta / scale) * y[viol, None] * x
            norms = scale * np.linalg.norm(v, axis=1)
            shrink = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
            v *= shrink[:, None]
    w = scale * v
    weights = w[:, :d].copy()
    return LinearModel(weights=weights, biases=w[:, d] - weights @ mean, classes=list(classes))


def predict(model: LinearModel, feature) -> Hashable:
    x = feature.counts if isinstance(feature, SdrHistogram) else feature
    # argmax returns the first maximum, i.e. the earliest class on ties.
    return model.classes[int(np.argmax(model.scores(x)))]


def predict_many(model: LinearModel, features) -> list:
    X = _features(features)
    return [model.classes[int(k)] for k in np.argmax(model.scores(X), axis=1)]


@dataclass
class ConfusionCounts:
    n_ij: np.ndarray
    classes: list | None = None
    clusters: list | None = None

    def __post_init__(self):
        self.n_ij = np.asarray(self.n_ij, dtype=np.int64)
        if self.n_ij.ndim != 2 or (self.n_ij < 0).any():
            raise InputError("n_ij must be a 2-D matrix of non-negative counts")

    @property
    def n_i(self) -> np.ndarray:
        return self.n_ij.sum(axis=1)

    @property
    def n_j(self) -> np.ndarray:
        return self.n_ij.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.n_ij.sum())

    @classmethod
    def from_labels(cls, true_labels, predicted, classes=None) -> "ConfusionCounts":
        if len(true_labels) != len(predicted):
            raise InputError("true and predicted label lists differ in length")
        if classes is None:
            classes = sorted(set(true_labels) | set(predicted))
        index = {c: k for k, c in enumerate(classes)}
        m = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(true_labels, predicted):
            m[index[t], index[p]] += 1
        return cls(m, list(classes), list(classes))


@dataclass
class F1Report:
    recall: np.ndarray
    precision: np.ndarray
    f: np.ndarray
    best_f: np.ndarray
    f1: float

    def to_dict(self) -> dict:
        return {
            "recall": self.recall.tolist(),
            "precision": self.precision.tolist(),
            "f": self.f.tolist(),
            "best_f": self.best_f.tolist(),
            "f1": self.f1,
        }


def f1_report(counts: ConfusionCounts) -> F1Report:
    """Clustering F-measure: class-size weighted best F over clusters."""
    m = counts.n_ij.astype(np.float64)
    n_i, n_j, n = counts.n_i, counts.n_j, counts.n
    if n <= 0:
        raise InputError("confusion matrix is empty")
    with np.errstate(divide="ignore", invalid="ignore"):
        recall = np.where(n_i[:, None] > 0, m / n_i[:, None], 0.0)
        precision = np.where(n_j[None, :] > 0, m / n_j[None, :], 0.0)
        denom = precision + recall
        f = np.where(denom > 0, 2.0 * recall * precision / denom, 0.0)
    best = f.max(axis=1) if f.shape[1] else np.zeros(f.shape[0])
    empty = np.flatnonzero(n_i == 0)
    if empty.size:
        warnings.warn(f"classes {empty.tolist()} have no items and get weight 0", stacklevel=2)
    # one division at the end keeps a perfect clustering at exactly 1.0
    f1 = float(np.sum(n_i * best) / n)
    return F1Report(recall=recall, precision=precision, f=f, best_f=best, f1=f1)
