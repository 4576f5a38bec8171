"""Policy-gradient training of the frame-selection policy with a frozen classifier.

The reward for a sampled clip is its confidence on the true label minus the
expected confidence of a uniformly drawn clip of the same size. That second
term does not depend on the policy, so it leaves the expected update
unchanged while shrinking its variance.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import Classifier
from .core import ConfigError, DivergenceError, DomainError, SyntheticVideo, rng_stream
from .policy import ClipSelection, PolicyParams, policy_forward, sample_clip
from .skim import FeatureExtractorSpec, SkimFeatures, extract
from .subsetprob import log_prob_grad

log = logging.getLogger(__name__)

REWARD_KINDS = ("clip", "frame", "vanilla")
EXACT_BASELINE_LIMIT = 500
MIN_VARIANCE_TRIALS = 30


@dataclass
class Stage2Config:
    N: int = 2
    lr: float = 0.1
    epochs: int = 100
    batch: int = 20
    K: int = 16
    prob_mode: str = "exact"
    M: int = 100
    reward_kind: str = "clip"
    seed: int = 0

    def validate(self, T: int | None = None) -> None:
        if self.N < 1 or (T is not None and self.N > T):
            raise ConfigError("N", f"need 1 <= N <= T, got {self.N}")
        if not self.lr >= 0:
            raise ConfigError("lr", "must be >= 0")
        if self.K < 1:
            raise ConfigError("K", "must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch", "must be >= 1")
        if self.prob_mode not in ("exact", "monte_carlo", "auto"):
            raise ConfigError("prob_mode", f"unknown mode {self.prob_mode!r}")
        if self.M < 1:
            raise ConfigError("M", "must be >= 1")
        if self.reward_kind not in REWARD_KINDS:
            raise ConfigError("reward_kind", f"must be one of {REWARD_KINDS}")


def _mean(vals) -> float:
    """Mean taken about the first value, so identical values give that value exactly."""
    vals = [float(v) for v in vals]
    ref = vals[0]
    return ref + math.fsum(v - ref for v in vals) / len(vals)


@dataclass(frozen=True)
class RewardSample:
    clip_confidence: float
    baseline: float
    reward: float
    baseline_mode: str
    baseline_samples: int


class ConfidenceTable:
    """Memoised true-label confidence of a frozen classifier on one video."""

    def __init__(self, video: SyntheticVideo, features: SkimFeatures, classifier: Classifier):
        self.video = video
        self.features = features
        self.classifier = classifier
        self._cache: dict[frozenset, float] = {}
        self._baselines: dict[int, float] = {}

    def __call__(self, clip) -> float:
        key = frozenset(int(i) for i in clip)
        if not key:
            raise DomainError("clip must be nonempty")
        if key not in self._cache:
            probs = self.classifier.predict(self.video, self.features, sorted(key))
            self._cache[key] = float(probs[self.video.label])
        return self._cache[key]

    def exact_baseline(self, N: int) -> float:
        if N not in self._baselines:
            self._baselines[N] = _mean(self(c) for c in itertools.combinations(range(self.video.T), N))
        return self._baselines[N]


def uniform_baseline(table: ConfidenceTable, N: int, K: int, rng: np.random.Generator | None):
    """Expected confidence of a uniformly drawn N-clip: (value, mode, samples)."""
    T = table.video.T
    n_subsets = math.comb(T, N)
    if n_subsets <= EXACT_BASELINE_LIMIT:
        return table.exact_baseline(N), "exact", n_subsets
    if rng is None:
        raise DomainError("a Monte-Carlo baseline needs an rng")
    return _mean(table(rng.choice(T, N, replace=False)) for _ in range(K)), "monte_carlo", K


def compute_reward(
    video: SyntheticVideo,
    clip,
    classifier: Classifier | ConfidenceTable,
    config: Stage2Config,
    features: SkimFeatures | None = None,
    rng: np.random.Generator | None = None,
) -> RewardSample:
    clip = clip.indices if isinstance(clip, ClipSelection) else tuple(int(i) for i in clip)
    if not clip:
        raise DomainError("clip must be nonempty")
    if isinstance(classifier, ConfidenceTable):
        table = classifier
    else:
        table = ConfidenceTable(video, features if features is not None else extract(video), classifier)
    N = len(clip)
    if config.reward_kind == "frame":
        conf = _mean(table((t,)) for t in clip)
    else:
        conf = table(clip)
    if config.reward_kind == "vanilla":
        return RewardSample(conf, 0.0, conf, "none", 0)
    baseline, mode, n = uniform_baseline(table, N, config.K, rng)
    return RewardSample(conf, baseline, conf - baseline, mode, n)


def theta_gradient(features: SkimFeatures, grad_logits: np.ndarray) -> np.ndarray:
    """Chain d/d logits to (w, b) through logits_t = w . z_t + b."""
    return np.append(features.z.T @ grad_logits, np.sum(grad_logits))


def _grad_log_prob(dist, features, clip, config, rng):
    res = log_prob_grad(dist.p, dist.logits, clip.indices, config.prob_mode, config.M, rng)
    return theta_gradient(features, res.grad_logits)


def single_update(
    video, features, table: ConfidenceTable, params: PolicyParams, config: Stage2Config,
    seed: int, *ids: int, N: int | None = None,
):
    """One REINFORCE sample: (reward sample, reward * grad log Prob in theta-space)."""
    N = N or config.N
    dist = policy_forward(params, features)
    clip = sample_clip(dist, N, rng_stream(seed, "clip", *ids))
    reward = compute_reward(video, clip, table, config, rng=rng_stream(seed, "baseline", *ids))
    glp = _grad_log_prob(dist, features, clip, config, rng_stream(seed, "perm", *ids))
    return reward, reward.reward * glp


@dataclass
class Stage2Result:
    params: PolicyParams
    log: list[dict] = field(default_factory=list)

    def log_csv(self) -> str:
        rows = ["epoch,mean_reward,mean_confidence,grad_norm"]
        for r in self.log:
            rows.append(
                f"{r['epoch']},{r['mean_reward']:.17g},{r['mean_confidence']:.17g},{r['grad_norm']:.17g}"
            )
        return "\n".join(rows) + "\n"


def stage2_train(
    dataset: list[SyntheticVideo],
    classifier: Classifier,
    init_params: PolicyParams | None = None,
    config: Stage2Config | None = None,
    extractor: FeatureExtractorSpec | None = None,
    budgets: dict[int, int] | None = None,
) -> Stage2Result:
    """Mini-batch REINFORCE ascent on the expected reward.

    ``budgets`` optionally maps video id to a per-video clip size; the same
    policy head is then trained across all sizes encountered.
    """
    config = config or Stage2Config()
    if not dataset:
        raise ConfigError("dataset", "must be nonempty")
    config.validate(dataset[0].T)
    feats = [extract(v, extractor) for v in dataset]
    tables = [ConfidenceTable(v, f, classifier) for v, f in zip(dataset, feats)]
    params = (init_params or PolicyParams.zeros(feats[0].z.shape[1])).copy()
    history = []
    for epoch in range(config.epochs):
        order = rng_stream(config.seed, "stage2-order", epoch).permutation(len(dataset))
        rewards, confs, norms = [], [], []
        for start in range(0, len(order), config.batch):
            grads = []
            for i in order[start:start + config.batch]:
                v = dataset[i]
                N = budgets.get(v.id, config.N) if budgets else config.N
                r, g = single_update(v, feats[i], tables[i], params, config, config.seed, epoch, v.id, N=N)
                rewards.append(r.reward)
                confs.append(r.clip_confidence)
                grads.append(g)
            step = np.mean(grads, axis=0)
            if not np.all(np.isfinite(step)):
                raise DivergenceError(epoch, "non-finite gradient")
            norms.append(float(np.linalg.norm(step)))
            vec = params.as_vector() + config.lr * step
            params = PolicyParams.from_vector(vec)
        entry = {
            "epoch": epoch,
            "mean_reward": math.fsum(rewards) / len(rewards),
            "mean_confidence": math.fsum(confs) / len(confs),
            "grad_norm": math.fsum(norms) / len(norms),
        }
        history.append(entry)
        log.debug("stage2 %s", entry)
    return Stage2Result(params, history)


# ---------------------------------------------------------------------------
# Estimator diagnostics

def exact_expected_update(
    video, features, params: PolicyParams, confidence, N: int, reward_kind: str = "clip",
) -> np.ndarray:
    """Brute force: sum over every N-subset s of Prob(s) * r(s) * grad log Prob(s).

    ``confidence`` maps a clip (tuple of indices) to its true-label confidence.
    """
    dist = policy_forward(params, features)
    subsets = list(itertools.combinations(range(video.T), N))
    conf = np.array([confidence(s) for s in subsets])
    if reward_kind == "frame":
        conf = np.array([_mean(confidence((t,)) for t in s) for s in subsets])
        base = _mean(confidence(s) for s in subsets)
    elif reward_kind == "vanilla":
        base = 0.0
    else:
        base = _mean(conf)
    total = np.zeros(params.as_vector().shape)
    for s, c in zip(subsets, conf):
        res = log_prob_grad(dist.p, dist.logits, s, "exact")
        total += res.prob * (c - base) * theta_gradient(features, res.grad_logits)
    return total


def gradient_samples(
    videos, classifier, params: PolicyParams, config: Stage2Config, kind: str, trials: int,
    seed: int, extractor: FeatureExtractorSpec | None = None,
) -> np.ndarray:
    """Per-trial batch gradients (trials x dim); clip draws depend only on (seed, trial, video)."""
    cfg = Stage2Config(**{**config.__dict__, "reward_kind": kind})
    feats = [extract(v, extractor) for v in videos]
    tables = [ConfidenceTable(v, f, classifier) for v, f in zip(videos, feats)]
    out = np.empty((trials, feats[0].z.shape[1] + 1))
    for trial in range(trials):
        grads = [
            single_update(v, f, tab, params, cfg, seed, trial, v.id)[1]
            for v, f, tab in zip(videos, feats, tables)
        ]
        out[trial] = np.mean(grads, axis=0)
    return out


def trace_variance(samples: np.ndarray) -> float:
    return float(np.sum(np.var(samples, axis=0, ddof=1)))


def gradient_variance(
    videos, classifier, params, config: Stage2Config, kinds=("clip", "vanilla"), trials: int = 500,
    seed: int = 0, extractor=None,
) -> dict[str, float]:
    """Trace of the empirical covariance of the gradient estimator, per reward kind.

    All kinds see the same clip draws, so the comparison is paired.
    """
    if trials < MIN_VARIANCE_TRIALS:
        raise DomainError(f"need at least {MIN_VARIANCE_TRIALS} trials, got {trials}")
    return {
        k: trace_variance(gradient_samples(videos, classifier, params, config, k, trials, seed, extractor))
        for k in kinds
    }


def paired_bootstrap_ci(a: np.ndarray, b: np.ndarray, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """CI for trace_variance(a) - trace_variance(b), resampling trials jointly."""
    if a.shape != b.shape:
        raise DomainError("paired samples must share a shape")
    rng = rng_stream(seed, "bootstrap")
    n = a.shape[0]
    diffs = np.empty(n_boot)
    for i in range(n_boot):
        idx = rng.integers(0, n, n)
        diffs[i] = trace_variance(a[idx]) - trace_variance(b[idx])
    lo, hi = np.quantile(diffs, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)
