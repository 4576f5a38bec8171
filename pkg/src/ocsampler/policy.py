"""Frame-selection policy: one linear score per frame, softmax over the T candidates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .classifier import softmax
from .core import ConfigError, DegenerateDistributionError, DomainError, atomic_write_text, fmt_float
from .skim import SkimFeatures

MIN_REMAINING_MASS = 1e-12


@dataclass(eq=False)
class PolicyParams:
    w: np.ndarray  # (D_s,) shared across frames
    b: float = 0.0

    @classmethod
    def zeros(cls, D: int) -> "PolicyParams":
        return cls(np.zeros(D), 0.0)

    @classmethod
    def random(cls, D: int, rng: np.random.Generator, scale: float = 0.1) -> "PolicyParams":
        return cls(scale * rng.standard_normal(D), 0.0)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.w.copy(), float(self.b))

    def as_vector(self) -> np.ndarray:
        return np.append(self.w, self.b)

    @classmethod
    def from_vector(cls, v) -> "PolicyParams":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:-1].copy(), float(v[-1]))


@dataclass(frozen=True, eq=False)
class PolicyDistribution:
    p: np.ndarray
    logits: np.ndarray

    @property
    def T(self) -> int:
        return self.p.shape[0]

    @classmethod
    def from_logits(cls, logits) -> "PolicyDistribution":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(softmax(logits), logits)

    @classmethod
    def from_probs(cls, p) -> "PolicyDistribution":
        p = np.asarray(p, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(p, np.log(p))


@dataclass(frozen=True)
class ClipSelection:
    indices: tuple[int, ...]  # order as drawn

    def __post_init__(self):
        if len(self.indices) < 1:
            raise DomainError("a clip needs at least one frame")
        if len(set(self.indices)) != len(self.indices):
            raise DomainError(f"duplicate frame indices in {self.indices}")

    @property
    def as_set(self) -> frozenset[int]:
        return frozenset(self.indices)

    @property
    def N(self) -> int:
        return len(self.indices)


def policy_forward(params: PolicyParams, features: SkimFeatures) -> PolicyDistribution:
    if features.z.shape[1] != params.w.shape[0]:
        raise ConfigError("w", f"feature dim {features.z.shape[1]} != policy dim {params.w.shape[0]}")
    return PolicyDistribution.from_logits(features.z @ params.w + params.b)


def _check_n(N: int, T: int) -> None:
    if not 1 <= N <= T:
        raise DomainError(f"need 1 <= N <= T, got N={N}, T={T}")


def sample_clip(dist: PolicyDistribution, N: int, rng: np.random.Generator) -> ClipSelection:
    """Draw N distinct frames one at a time, renormalising over what is left."""
    T = dist.T
    _check_n(N, T)
    p = np.array(dist.p, dtype=np.float64)
    taken = np.zeros(T, dtype=bool)
    drawn = []
    for _ in range(N):
        weights = np.where(taken, 0.0, p)
        remaining = weights.sum()
        if remaining < MIN_REMAINING_MASS:
            raise DegenerateDistributionError(
                f"remaining mass {remaining:.3g} after drawing {drawn}"
            )
        u = rng.random() * remaining
        i = int(np.searchsorted(np.cumsum(weights), u, side="right"))
        # Guard against u landing on the float edge or on a zero-weight slot.
        if i >= T or taken[i]:
            i = int(np.flatnonzero(~taken & (p > 0))[-1])
        taken[i] = True
        drawn.append(i)
    return ClipSelection(tuple(drawn))


def top_n(dist: PolicyDistribution, N: int) -> ClipSelection:
    """The N most probable frames, ties to the smaller index, listed ascending."""
    _check_n(N, dist.T)
    # Rank on logits: softmax can round distinct scores to equal probabilities.
    order = np.lexsort((np.arange(dist.T), -dist.logits))
    return ClipSelection(tuple(sorted(int(i) for i in order[:N])))


def dumps_policy(params: PolicyParams, meta: dict | None = None) -> str:
    meta = dict(meta or {})
    meta["b"] = fmt_float(params.b)
    return checkpoint.dumps("policy", {"w": params.w}, meta)


def save_policy(path, params: PolicyParams, meta: dict | None = None) -> None:
    atomic_write_text(path, dumps_policy(params, meta))


def load_policy(path) -> tuple[PolicyParams, dict]:
    _, tensors, meta = checkpoint.load(path, expect_kind="policy")
    return PolicyParams(tensors["w"], float(meta.pop("b"))), meta
