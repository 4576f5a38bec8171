"""Clip classifiers: a closed-form coverage oracle and a trainable linear softmax model.

Both expose ``predict(video, features, clip) -> probs`` where ``probs`` is a
length-C probability vector. The oracle reads the planted salient set from
``video``; the linear model reads ``features``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from . import checkpoint
from .core import (
    ConfigError,
    DivergenceError,
    DomainError,
    SyntheticVideo,
    atomic_write_text,
    fmt_float,
    rng_stream,
)
from .skim import FeatureExtractorSpec, SkimFeatures, extract

log = logging.getLogger(__name__)

ORACLE_CAP = 1.0 - 1e-9


class Classifier(Protocol):
    def predict(self, video: SyntheticVideo, features: SkimFeatures, clip: Iterable[int]) -> np.ndarray:
        ...


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _clip_indices(clip: Iterable[int], T: int) -> np.ndarray:
    idx = np.array(sorted(set(int(i) for i in clip)), dtype=np.int64)
    if idx.size == 0:
        raise DomainError("clip must be nonempty")
    if idx[0] < 0 or idx[-1] >= T:
        raise DomainError(f"clip indices must lie in [0, {T})")
    return idx


def is_correct(probs: np.ndarray, label: int) -> bool:
    """argmax(probs) == label; ties resolve to the smallest class index."""
    return int(np.argmax(probs)) == int(label)


def confidence(classifier: Classifier, video, features, clip) -> float:
    return float(classifier.predict(video, features, clip)[video.label])


# ---------------------------------------------------------------------------
# Coverage oracle

@dataclass(frozen=True)
class CoverageOracle:
    """True-label mass grows with the fraction of salient frames in the clip.

    mass = c_min + (1 - c_min) * coverage**gamma, capped at 1 - 1e-9; the rest
    is spread evenly over the other classes.
    """

    C: int
    c_min: float = 0.1
    gamma: float = 1.0

    def __post_init__(self):
        if self.C < 2:
            raise ConfigError("C", "must be >= 2")
        if not 0 < self.c_min < 1:
            raise ConfigError("c_min", "must lie in (0, 1)")
        if not self.gamma > 0:
            raise ConfigError("gamma", "must be > 0")

    def true_mass(self, video: SyntheticVideo, clip: Iterable[int]) -> float:
        idx = _clip_indices(clip, video.T)
        hits = len(video.salient_set.intersection(idx.tolist()))
        coverage = hits / len(video.salient_set)
        return min(self.c_min + (1.0 - self.c_min) * coverage**self.gamma, ORACLE_CAP)

    def predict(self, video, features=None, clip=()) -> np.ndarray:
        mass = self.true_mass(video, clip)
        p = np.full(self.C, (1.0 - mass) / (self.C - 1))
        p[video.label] = mass
        return p


# ---------------------------------------------------------------------------
# Linear softmax classifier

@dataclass(eq=False)
class LinearClassifier:
    W: np.ndarray  # (C, D_s)
    b: np.ndarray  # (C,)

    @classmethod
    def zeros(cls, C: int, D: int) -> "LinearClassifier":
        return cls(np.zeros((C, D)), np.zeros(C))

    @property
    def C(self) -> int:
        return self.W.shape[0]

    def copy(self) -> "LinearClassifier":
        return LinearClassifier(self.W.copy(), self.b.copy())

    def predict(self, video, features: SkimFeatures, clip) -> np.ndarray:
        return classify(self, features, clip)


def pool_clip(features: SkimFeatures, clip) -> np.ndarray:
    idx = _clip_indices(clip, features.T)
    return features.z[idx].mean(axis=0)


def classify(model: LinearClassifier, features: SkimFeatures, clip) -> np.ndarray:
    """Mean-pool the clip's features, apply the affine map, softmax."""
    if features.z.shape[1] != model.W.shape[1]:
        raise ConfigError("W", f"feature dim {features.z.shape[1]} != model dim {model.W.shape[1]}")
    x = pool_clip(features, clip)
    return softmax(model.W @ x + model.b)


def cross_entropy_and_grad(model: LinearClassifier, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over rows of ``X`` (pooled features) and its gradient."""
    logits = X @ model.W.T + model.b
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    n = X.shape[0]
    loss = float(np.mean(logsumexp - shifted[np.arange(n), y]))
    probs = np.exp(shifted - logsumexp[:, None])
    probs[np.arange(n), y] -= 1.0
    probs /= n
    return loss, probs.T @ X, probs.sum(axis=0)


def stable_lr(dataset_features: list[SkimFeatures]) -> float:
    """Learning rate below which gradient descent on the mean CE cannot overshoot.

    The CE Hessian in (W, b) is bounded by L = (||x||^2 + 1) / 2 per sample,
    so any lr < 2 / L descends; this returns 1 / L for headroom.
    """
    worst = max(float(np.max(np.sum(f.z**2, axis=1))) for f in dataset_features)
    return 2.0 / (worst + 1.0)


@dataclass
class Stage1Hyper:
    lr: float = 0.1
    epochs: int = 30
    batch: int = 32
    N_train: int = 2
    seed: int = 0


@dataclass
class Stage1Result:
    model: LinearClassifier
    losses: list[float] = field(default_factory=list)


def train_classifier(
    dataset: list[SyntheticVideo],
    extractor_spec: FeatureExtractorSpec | None = None,
    hyper: Stage1Hyper | None = None,
    init: LinearClassifier | None = None,
    C: int | None = None,
) -> Stage1Result:
    """Warm up the linear classifier on randomly sampled N_train-frame clips."""
    hyper = hyper or Stage1Hyper()
    if not dataset:
        raise ConfigError("dataset", "must be nonempty")
    T = dataset[0].T
    if not 1 <= hyper.N_train <= T:
        raise ConfigError("N_train", f"need 1 <= N_train <= T={T}")
    feats = [extract(v, extractor_spec) for v in dataset]
    D = feats[0].z.shape[1]
    C = C if C is not None else max(v.label for v in dataset) + 1
    model = init.copy() if init is not None else LinearClassifier.zeros(C, D)
    labels = np.array([v.label for v in dataset])
    losses = []
    for epoch in range(hyper.epochs):
        order = rng_stream(hyper.seed, "stage1-order", epoch).permutation(len(dataset))
        X = np.empty((len(dataset), D))
        for i, v in enumerate(dataset):
            clip = rng_stream(hyper.seed, "stage1-clip", epoch, v.id).choice(T, hyper.N_train, replace=False)
            X[i] = feats[i].z[clip].mean(axis=0)
        batch_losses = []
        for start in range(0, len(order), hyper.batch):
            sel = order[start:start + hyper.batch]
            loss, gW, gb = cross_entropy_and_grad(model, X[sel], labels[sel])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            model.W -= hyper.lr * gW
            model.b -= hyper.lr * gb
            batch_losses.append(loss * len(sel))
        losses.append(sum(batch_losses) / len(order))
        log.debug("stage1 epoch %d loss %.6f", epoch, losses[-1])
    if not (np.all(np.isfinite(model.W)) and np.all(np.isfinite(model.b))):
        raise DivergenceError(hyper.epochs - 1, "non-finite parameters")
    return Stage1Result(model, losses)


# ---------------------------------------------------------------------------
# Checkpoints

def dumps_classifier(model, meta: dict | None = None) -> str:
    meta = dict(meta or {})
    if isinstance(model, LinearClassifier):
        return checkpoint.dumps("linear_classifier", {"W": model.W, "b": model.b}, meta)
    if isinstance(model, CoverageOracle):
        meta.update(C=model.C, c_min=fmt_float(model.c_min), gamma=fmt_float(model.gamma))
        return checkpoint.dumps("coverage_oracle", {}, meta)
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_classifier(path, model, meta: dict | None = None) -> None:
    atomic_write_text(path, dumps_classifier(model, meta))


def load_classifier(path):
    kind, tensors, meta = checkpoint.load(path)
    if kind == "linear_classifier":
        return LinearClassifier(tensors["W"], tensors["b"]), meta
    if kind == "coverage_oracle":
        return CoverageOracle(int(meta["C"]), float(meta["c_min"]), float(meta["gamma"])), meta
    raise ConfigError("checkpoint", f"not a classifier checkpoint: {kind}")
