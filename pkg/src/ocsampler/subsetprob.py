"""Probability that sequential without-replacement sampling returns a given frame set.

A set of N frames can be drawn in any of N! orders. Each order has a chain
probability ``p[i1] * p[i2] / (1 - p[i1]) * ...``; the set probability is the
sum over orders. For large N the sum is estimated from uniformly sampled
orders, scaled by N!, which keeps the estimate unbiased.

Gradients are taken analytically: each order's chain probability is
differentiated with the product rule, then pushed through the softmax
Jacobian to the logits.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import DomainError, NumericalDomainError

DEFAULT_PERMUTATION_LIMIT = 40320  # 8!
MIN_DENOMINATOR = 1e-12
CLAMP_RTOL = 1e-6


class PermutationLimitError(DomainError):
    code = "E_PERM_LIMIT"


@dataclass(frozen=True, eq=False)
class SubsetProbResult:
    prob: float
    log_prob: float
    grad_logits: np.ndarray
    mode: str  # "exact" | "monte_carlo"
    mc_permutations: int | None = None


def _as_subset(subset, T: int) -> np.ndarray:
    idx = [int(i) for i in subset]
    if not idx:
        raise DomainError("subset must be nonempty")
    if len(set(idx)) != len(idx):
        raise DomainError(f"subset has repeated indices: {idx}")
    if min(idx) < 0 or max(idx) >= T:
        raise DomainError(f"subset indices must lie in [0, {T})")
    return np.array(sorted(idx), dtype=np.int64)


def _denominators(pp: np.ndarray, outside: float) -> np.ndarray:
    """Remaining mass before each draw, shape like ``pp`` (rows are orders).

    Summed over the frames still available (``outside`` is the mass off the
    subset) rather than as ``1 - prefix``; the two agree on the simplex but
    the subtraction cancels badly when one frame dominates.
    """
    denom = outside + np.cumsum(pp[:, ::-1], axis=1)[:, ::-1]
    if np.any(denom < MIN_DENOMINATOR * (1.0 - CLAMP_RTOL)):
        raise NumericalDomainError(
            f"remaining mass {float(denom.min()):.3g} below {MIN_DENOMINATOR:g}"
        )
    return np.maximum(denom, MIN_DENOMINATOR)


def _chain_terms(p: np.ndarray, orders: np.ndarray):
    """Chain probabilities of each order and d(sum of them)/dp."""
    pp = p[orders]
    mask = np.ones(p.shape[0], dtype=bool)
    mask[orders[0]] = False
    denom = _denominators(pp, math.fsum(p[mask]))
    with np.errstate(divide="ignore"):
        log_q = np.sum(np.log(pp) - np.log(denom), axis=1)
    q = np.exp(log_q)
    inv = 1.0 / denom
    # Frame at position a appears in the prefix of every later denominator.
    tail = np.cumsum(inv[:, ::-1], axis=1)[:, ::-1] - inv
    with np.errstate(divide="ignore", invalid="ignore"):
        dq = q[:, None] * (1.0 / pp + tail)
    dq = np.where(pp > 0, dq, 0.0)
    grad_p = np.zeros_like(p)
    np.add.at(grad_p, orders, dq)
    return q, log_q, grad_p


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    if not np.isfinite(m):
        return m
    return m + math.log(math.fsum(np.exp(x - m)))


def _result(p, q, log_q, grad_p, scale: float, mode: str, mc=None) -> SubsetProbResult:
    total = math.fsum(q)
    prob = scale * total
    if total > 1e-300:
        log_prob = math.log(prob)
    else:
        log_prob = math.log(scale) + _logsumexp(log_q)
    g = grad_p / total if total > 0 else np.zeros_like(p)
    grad_logits = p * (g - np.dot(p, g))
    return SubsetProbResult(prob, log_prob, grad_logits, mode, mc)


def chain_prob(p_L, order) -> float:
    """Probability of drawing exactly ``order`` as the first len(order) draws."""
    p = np.asarray(p_L, dtype=np.float64)
    order = [int(i) for i in order]
    _as_subset(order, p.shape[0])
    q, _, _ = _chain_terms(p, np.array([order], dtype=np.int64))
    return float(q[0])


def all_orderings(subset) -> np.ndarray:
    """Every ordering of ``subset``, lexicographic in the sorted subset."""
    return np.array(list(itertools.permutations(sorted(int(i) for i in subset))), dtype=np.int64)


def exact_subset_prob(p_L, subset, limit: int = DEFAULT_PERMUTATION_LIMIT) -> SubsetProbResult:
    p = np.asarray(p_L, dtype=np.float64)
    idx = _as_subset(subset, p.shape[0])
    if math.factorial(idx.size) > limit:
        raise PermutationLimitError(
            f"{idx.size}! orderings exceed the limit {limit}; use mc_subset_prob"
        )
    q, log_q, grad_p = _chain_terms(p, all_orderings(idx))
    return _result(p, q, log_q, grad_p, 1.0, "exact")


def mc_subset_prob(
    p_L, subset, M: int, rng: np.random.Generator, exhaust: bool = True,
) -> SubsetProbResult:
    """N! times the mean chain probability over M uniformly drawn orderings.

    Orderings are drawn independently (with replacement), so the estimate is
    unbiased with variance proportional to 1/M. With ``exhaust`` set and
    M >= N!, every ordering is enumerated instead, giving the exact sum.
    """
    if M < 1:
        raise DomainError("M must be >= 1")
    p = np.asarray(p_L, dtype=np.float64)
    idx = _as_subset(subset, p.shape[0])
    n_orders = math.factorial(idx.size)
    if exhaust and M >= n_orders:
        q, log_q, grad_p = _chain_terms(p, all_orderings(idx))
        return _result(p, q, log_q, grad_p, 1.0, "monte_carlo", M)
    orders = rng.permuted(np.tile(idx, (M, 1)), axis=1)
    q, log_q, grad_p = _chain_terms(p, orders)
    return _result(p, q, log_q, grad_p, n_orders / M, "monte_carlo", M)


def log_prob_grad(
    p_L,
    logits,
    subset,
    mode: str = "exact",
    M: int | None = None,
    rng: np.random.Generator | None = None,
    limit: int = DEFAULT_PERMUTATION_LIMIT,
) -> SubsetProbResult:
    """Subset probability together with d log Prob / d logits.

    ``p_L`` must equal softmax(logits); the gradient uses the softmax
    Jacobian diag(p) - p p^T.
    """
    p = np.asarray(p_L, dtype=np.float64)
    if logits is not None and np.shape(logits) != p.shape:
        raise DomainError("logits and p_L differ in length")
    if mode == "exact":
        return exact_subset_prob(p, subset, limit)
    if mode == "monte_carlo":
        if M is None or rng is None:
            raise DomainError("monte_carlo mode needs M and rng")
        return mc_subset_prob(p, subset, M, rng)
    if mode == "auto":
        if math.factorial(len(list(subset))) <= limit:
            return exact_subset_prob(p, subset, limit)
        return mc_subset_prob(p, subset, M or 1000, rng)
    raise DomainError(f"unknown probability mode {mode!r}")
