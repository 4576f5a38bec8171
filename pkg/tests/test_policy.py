import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocsampler.core import ConfigError, DegenerateDistributionError, DomainError, SyntheticVideo
from ocsampler.policy import (
    ClipSelection,
    PolicyDistribution,
    PolicyParams,
    load_policy,
    policy_forward,
    sample_clip,
    save_policy,
    top_n,
)
from ocsampler.skim import SkimFeatures


def _features(rng, T=6, D=4):
    return SkimFeatures(rng.standard_normal((T, D)), 0)


def test_zero_params_give_uniform(rng):
    dist = policy_forward(PolicyParams.zeros(4), _features(rng))
    assert np.allclose(dist.p, 1 / 6, rtol=0, atol=1e-15)


@pytest.mark.parametrize("logits, expected", [
    ([0.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]),
    ([math.log(2), 0.0, 0.0], [0.5, 0.25, 0.25]),
])
def test_softmax_by_hand(logits, expected):
    assert np.allclose(PolicyDistribution.from_logits(logits).p, expected, rtol=0, atol=1e-15)


def test_forward_dimension_mismatch(rng):
    with pytest.raises(ConfigError):
        policy_forward(PolicyParams.zeros(3), _features(rng))


def test_forward_matches_direct_affine(rng):
    f = _features(rng)
    params = PolicyParams.random(4, rng, scale=1.0)
    logits = f.z @ params.w + params.b
    assert np.allclose(policy_forward(params, f).p, np.exp(logits) / np.exp(logits).sum(), rtol=1e-13, atol=0)


def test_clip_selection_validation():
    with pytest.raises(DomainError):
        ClipSelection(())
    with pytest.raises(DomainError):
        ClipSelection((1, 1))
    assert ClipSelection((3, 1)).as_set == frozenset({1, 3})


@given(st.integers(1, 8), st.integers(0, 10**6))
def test_sample_full_set(T, seed):
    dist = PolicyDistribution.from_logits(np.random.default_rng(seed).standard_normal(T))
    sel = sample_clip(dist, T, np.random.default_rng(seed))
    assert sel.as_set == frozenset(range(T))


@settings(max_examples=50)
@given(st.integers(2, 10), st.data())
def test_sample_distinct_and_in_range(T, data):
    N = data.draw(st.integers(1, T))
    seed = data.draw(st.integers(0, 10**6))
    dist = PolicyDistribution.from_logits(np.random.default_rng(seed).standard_normal(T) * 3)
    sel = sample_clip(dist, N, np.random.default_rng(seed + 1))
    assert len(sel.indices) == N == len(sel.as_set)
    assert all(0 <= i < T for i in sel.indices)


def test_sample_near_one_hot_frequency():
    eps = 1e-6
    dist = PolicyDistribution.from_probs([1 - 2 * eps, eps, eps])
    rng = np.random.default_rng(0)
    n = 100_000
    zeros = sum(sample_clip(dist, 1, rng).indices[0] == 0 for _ in range(n))
    p = 1 - 2 * eps
    assert abs(zeros / n - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1 / n


def test_sample_uniform_pairs():
    dist = PolicyDistribution.from_probs(np.full(4, 0.25))
    rng = np.random.default_rng(1)
    n = 100_000
    counts = {s: 0 for s in itertools.combinations(range(4), 2)}
    for _ in range(n):
        counts[tuple(sorted(sample_clip(dist, 2, rng).indices))] += 1
    sigma = math.sqrt((1 / 6) * (5 / 6) / n)
    for c in counts.values():
        assert abs(c / n - 1 / 6) <= 3 * sigma


def test_sample_degenerate_distribution():
    dist = PolicyDistribution.from_probs([1.0, 0.0, 0.0])
    with pytest.raises(DegenerateDistributionError):
        sample_clip(dist, 2, np.random.default_rng(0))


def test_sample_n_out_of_range():
    dist = PolicyDistribution.from_probs([0.5, 0.5])
    with pytest.raises(DomainError):
        sample_clip(dist, 3, np.random.default_rng(0))


def test_top_n_examples():
    assert top_n(PolicyDistribution.from_probs([0.1, 0.4, 0.2, 0.3]), 2).as_set == {1, 3}
    assert top_n(PolicyDistribution.from_probs(np.full(4, 0.25)), 2).as_set == {0, 1}
    assert top_n(PolicyDistribution.from_probs([0.1, 0.4, 0.2, 0.3]), 4).as_set == {0, 1, 2, 3}


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=10), st.data())
def test_top_n_matches_sorted_rule(scores, data):
    N = data.draw(st.integers(1, len(scores)))
    dist = PolicyDistribution.from_logits(np.array(scores, dtype=float))
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    assert top_n(dist, N).as_set == frozenset(ranked[:N])


def test_params_vector_round_trip(rng):
    p = PolicyParams.random(5, rng, scale=1.0)
    q = PolicyParams.from_vector(p.as_vector())
    assert np.array_equal(p.w, q.w) and p.b == q.b


def test_policy_checkpoint_round_trip(tmp_path, rng):
    p = PolicyParams(rng.standard_normal(6) * 1e-3, float(rng.standard_normal()) / 3)
    save_policy(tmp_path / "p.ckpt", p, {"config_hash": "x"})
    q, meta = load_policy(tmp_path / "p.ckpt")
    assert np.array_equal(p.w, q.w) and p.b == q.b and meta["config_hash"] == "x"
