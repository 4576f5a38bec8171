"""Adaptive frame budget: pseudo-labels from combination statistics and a small head to predict them.

For every clip size m the classifier is run on the m-frame combinations of a
video and the fraction it gets right is recorded. The smallest m whose
fraction clears ``epsilon`` becomes the video's budget k; larger sizes keep a
geometrically decaying share ``alpha**-(m-k)`` of the label mass.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .classifier import Classifier, is_correct, softmax
from .core import ConfigError, DivergenceError, SyntheticVideo, fmt_float, rng_stream
from .policy import ClipSelection, PolicyParams, policy_forward, top_n
from .skim import FeatureExtractorSpec, SkimFeatures, extract

log = logging.getLogger(__name__)

HIDDEN = 64


@dataclass
class BudgetConfig:
    epsilon: float = 0.5
    alpha: float = 2.0
    samples_per_m: int = 64
    exact_limit: int = 200
    lr: float = 0.1
    epochs: int = 200
    batch: int = 32
    hidden: int = HIDDEN
    seed: int = 0

    def validate(self) -> None:
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon", "must lie in (0, 1]")
        if not self.alpha > 1:
            raise ConfigError("alpha", "must be > 1")
        if self.samples_per_m < 1:
            raise ConfigError("samples_per_m", "must be >= 1")
        if self.exact_limit < 1:
            raise ConfigError("exact_limit", "must be >= 1")
        if not self.lr >= 0:
            raise ConfigError("lr", "must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch", "must be >= 1")
        if self.hidden < 1:
            raise ConfigError("hidden", "must be >= 1")


@dataclass(frozen=True, eq=False)
class BudgetLabel:
    r: np.ndarray
    k: int  # 1-indexed budget
    y_B: np.ndarray
    y_B_normalized: np.ndarray
    r_mode: str = "exact"
    samples_per_m: int = 0


# ---------------------------------------------------------------------------
# Labels

def ratio_for_m(video, features, classifier: Classifier, m: int, exact: bool, samples: int, rng) -> float:
    T = video.T
    if exact:
        hits = [is_correct(classifier.predict(video, features, c), video.label)
                for c in itertools.combinations(range(T), m)]
    else:
        hits = [is_correct(classifier.predict(video, features, rng.choice(T, m, replace=False)), video.label)
                for _ in range(samples)]
    return sum(hits) / len(hits)


def correctness_ratios(
    video: SyntheticVideo,
    classifier: Classifier,
    config: BudgetConfig | None = None,
    rng: np.random.Generator | None = None,
    features: SkimFeatures | None = None,
) -> tuple[np.ndarray, str]:
    """Fraction of m-frame combinations classified correctly, for m = 1..T.

    Sizes with at most ``exact_limit`` combinations are enumerated; the rest
    use ``samples_per_m`` independent uniform m-subsets. Returns the ratios
    and "exact" or "monte_carlo" (the latter if any size was sampled).
    """
    config = config or BudgetConfig()
    features = features if features is not None else extract(video)
    rng = rng if rng is not None else rng_stream(config.seed, "ratios", video.id)
    T = video.T
    r = np.empty(T)
    mode = "exact"
    for m in range(1, T + 1):
        exact = math.comb(T, m) <= config.exact_limit
        if not exact:
            mode = "monte_carlo"
        r[m - 1] = ratio_for_m(video, features, classifier, m, exact, config.samples_per_m, rng)
    return r, mode


def build_budget_label(r, config: BudgetConfig | None = None, r_mode: str = "exact") -> BudgetLabel:
    config = config or BudgetConfig()
    config.validate()
    r = np.asarray(r, dtype=np.float64)
    T = r.shape[0]
    meets = np.flatnonzero(r >= config.epsilon)
    # No size reaches epsilon: fall back to using every frame.
    k = int(meets[0]) + 1 if meets.size else T
    m = np.arange(1, T + 1)
    y = np.where(m >= k, config.alpha ** -(m - k).astype(np.float64), 0.0)
    return BudgetLabel(r, k, y, y / y.sum(), r_mode, config.samples_per_m if r_mode == "monte_carlo" else 0)


def labels_csv(video_ids, labels: list[BudgetLabel]) -> str:
    T = labels[0].r.shape[0] if labels else 0
    head = ["video_id", "k"] + [f"r_{m}" for m in range(1, T + 1)] + [f"yB_{m}" for m in range(1, T + 1)]
    rows = [",".join(head)]
    for vid, lab in zip(video_ids, labels):
        rows.append(",".join([str(vid), str(lab.k)] + [fmt_float(x) for x in lab.r] + [fmt_float(x) for x in lab.y_B]))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# Head

@dataclass(eq=False)
class BudgetHead:
    W1: np.ndarray  # (H, D_s)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (T, H)
    b2: np.ndarray  # (T,)

    @classmethod
    def zeros(cls, D: int, T: int, hidden: int = HIDDEN) -> "BudgetHead":
        return cls(np.zeros((hidden, D)), np.zeros(hidden), np.zeros((T, hidden)), np.zeros(T))

    @classmethod
    def init(cls, D: int, T: int, hidden: int, rng: np.random.Generator) -> "BudgetHead":
        return cls(
            rng.standard_normal((hidden, D)) / math.sqrt(D),
            np.zeros(hidden),
            0.01 * rng.standard_normal((T, hidden)),
            np.zeros(T),
        )

    @property
    def T(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "BudgetHead":
        return BudgetHead(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def _forward(head: BudgetHead, z: np.ndarray):
    if z.shape[1] != head.W1.shape[1]:
        raise ConfigError("W1", f"feature dim {z.shape[1]} != head dim {head.W1.shape[1]}")
    pre = z @ head.W1.T + head.b1
    hidden = np.maximum(pre, 0.0)
    pooled = hidden.mean(axis=0)
    logits = head.W2 @ pooled + head.b2
    return pre, pooled, logits


def budget_forward(head: BudgetHead, features: SkimFeatures) -> np.ndarray:
    """Distribution over frame counts 1..T: relu MLP per frame, mean, linear, softmax."""
    if features.T != head.T:
        raise ConfigError("W2", f"head predicts {head.T} counts but video has {features.T} frames")
    return softmax(_forward(head, features.z)[2])


def budget_loss_and_grad(head: BudgetHead, Z: list[np.ndarray], Y: np.ndarray, w: np.ndarray):
    """Mean of w_i * CE(f_B(z_i), y_i) over the batch, with its gradient."""
    n = len(Z)
    grads = BudgetHead.zeros(head.W1.shape[1], head.T, head.W1.shape[0])
    total = 0.0
    for z, y, wi in zip(Z, Y, w):
        pre, pooled, logits = _forward(head, z)
        shifted = logits - logits.max()
        log_q = shifted - math.log(np.exp(shifted).sum())
        total += wi * float(-(y @ log_q))
        d_logits = wi * (np.exp(log_q) * y.sum() - y) / n
        grads.W2 += np.outer(d_logits, pooled)
        grads.b2 += d_logits
        d_pre = (head.W2.T @ d_logits)[None, :] / z.shape[0] * (pre > 0)
        grads.W1 += d_pre.T @ z
        grads.b1 += d_pre.sum(axis=0)
    return total / n, grads


def class_weights(ks) -> np.ndarray:
    """Per-sample weights 1 / freq(k), rescaled to average 1 over the samples."""
    ks = np.asarray(ks)
    values, counts = np.unique(ks, return_counts=True)
    inv = dict(zip(values.tolist(), (1.0 / counts).tolist()))
    w = np.array([inv[k] for k in ks.tolist()])
    return w * (len(w) / w.sum())


@dataclass
class BudgetTrainResult:
    head: BudgetHead
    labels: list[BudgetLabel]
    weights: np.ndarray
    losses: list[float] = field(default_factory=list)


def compute_labels(dataset, classifier, config: BudgetConfig, extractor=None) -> list[BudgetLabel]:
    labels = []
    for v in dataset:
        f = extract(v, extractor)
        r, mode = correctness_ratios(v, classifier, config, rng_stream(config.seed, "ratios", v.id), f)
        labels.append(build_budget_label(r, config, mode))
    return labels


def train_budget(
    dataset: list[SyntheticVideo],
    classifier: Classifier | None,
    config: BudgetConfig | None = None,
    extractor: FeatureExtractorSpec | None = None,
    labels: list[BudgetLabel] | None = None,
    init: BudgetHead | None = None,
) -> BudgetTrainResult:
    """Fit the budget head to class-weighted soft pseudo-labels by mini-batch SGD."""
    config = config or BudgetConfig()
    config.validate()
    if not dataset:
        raise ConfigError("dataset", "must be nonempty")
    if labels is None:
        labels = compute_labels(dataset, classifier, config, extractor)
    Z = [extract(v, extractor).z for v in dataset]
    T, D = Z[0].shape
    Y = np.array([lab.y_B_normalized for lab in labels])
    w = class_weights([lab.k for lab in labels])
    head = init.copy() if init is not None else BudgetHead.init(D, T, config.hidden, rng_stream(config.seed, "budget-init"))
    losses = []
    for epoch in range(config.epochs):
        order = rng_stream(config.seed, "budget-order", epoch).permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch):
            sel = order[start:start + config.batch]
            loss, g = budget_loss_and_grad(head, [Z[i] for i in sel], Y[sel], w[sel])
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            for name, t in head.tensors().items():
                t -= config.lr * getattr(g, name)
            epoch_loss += loss * len(sel)
        losses.append(epoch_loss / len(order))
    return BudgetTrainResult(head, labels, w, losses)


def adaptive_infer(
    video: SyntheticVideo,
    head: BudgetHead,
    policy_params: PolicyParams,
    classifier: Classifier,
    extractor: FeatureExtractorSpec | None = None,
) -> tuple[int, ClipSelection, np.ndarray]:
    """Pick the clip size from the budget head (ties to fewer frames), then the top frames."""
    features = extract(video, extractor)
    n_used = int(np.argmax(budget_forward(head, features))) + 1
    clip = top_n(policy_forward(policy_params, features), n_used)
    return n_used, clip, classifier.predict(video, features, clip.indices)


def dumps_budget(head: BudgetHead, meta: dict | None = None) -> str:
    return checkpoint.dumps("budget_head", head.tensors(), meta)


def save_budget(path, head: BudgetHead, meta: dict | None = None) -> None:
    checkpoint.save(path, "budget_head", head.tensors(), meta)


def load_budget(path) -> tuple[BudgetHead, dict]:
    _, t, meta = checkpoint.load(path, expect_kind="budget_head")
    return BudgetHead(t["W1"], t["b1"], t["W2"], t["b2"]), meta
