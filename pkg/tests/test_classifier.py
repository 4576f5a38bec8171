import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocsampler.classifier import (
    CoverageOracle,
    LinearClassifier,
    Stage1Hyper,
    classify,
    cross_entropy_and_grad,
    is_correct,
    load_classifier,
    save_classifier,
    softmax,
    train_classifier,
)
from ocsampler.core import ConfigError, DatasetSpec, DivergenceError, DomainError, SyntheticVideo, generate_dataset
from ocsampler.gradcheck import central_difference, max_relative_error
from ocsampler.skim import extract


def _video(salient=(2, 5), label=1, T=10, D=8):
    return SyntheticVideo(0, label, np.zeros((T, D)), frozenset(salient), 0)


# -- oracle -----------------------------------------------------------------

def test_oracle_full_coverage():
    p = CoverageOracle(4).predict(_video(), None, [2, 5, 7])
    assert p[1] == 1 - 1e-9


def test_oracle_zero_coverage():
    p = CoverageOracle(4).predict(_video(), None, [0, 1])
    assert p[1] == pytest.approx(0.1, abs=1e-15)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)


def test_oracle_half_coverage():
    p = CoverageOracle(4, c_min=0.1, gamma=1.0).predict(_video(), None, [2, 3])
    assert p[1] == pytest.approx(0.55, abs=1e-15)
    for c in (0, 2, 3):
        assert p[c] == pytest.approx(0.15, abs=1e-15)


def test_oracle_zero_coverage_argmax_is_another_class():
    # The three other classes split 0.9 evenly (0.3 each) and beat the 0.1 floor.
    for label in range(4):
        p = CoverageOracle(4).predict(_video(label=label), None, [0])
        expected = 0 if label != 0 else 1
        assert int(np.argmax(p)) == expected
        assert not is_correct(p, label)


def test_oracle_empty_clip():
    with pytest.raises(DomainError):
        CoverageOracle(4).predict(_video(), None, [])


@settings(max_examples=50)
@given(st.sets(st.integers(0, 9), min_size=1), st.sets(st.integers(0, 9), min_size=1),
       st.floats(0.5, 4.0), st.integers(2, 6))
def test_oracle_is_distribution_and_monotone_in_coverage(clip, extra, gamma, C):
    oracle = CoverageOracle(C, gamma=gamma)
    v = _video(salient=(1, 4, 8), label=C - 1)
    p = oracle.predict(v, None, clip)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    q = oracle.predict(v, None, clip | extra)
    assert q[v.label] >= p[v.label]


# -- linear model --------------------------------------------------------------

def test_zero_model_is_uniform():
    f = extract(generate_dataset(DatasetSpec(num_videos=1))[0])
    p = classify(LinearClassifier.zeros(4, 8), f, [0, 3])
    assert np.allclose(p, 0.25, rtol=0, atol=1e-15)


def test_clip_order_is_irrelevant(rng):
    f = extract(generate_dataset(DatasetSpec(num_videos=1))[0])
    m = LinearClassifier(rng.standard_normal((4, 8)), rng.standard_normal(4))
    assert np.array_equal(classify(m, f, [7, 1, 4]), classify(m, f, [4, 7, 1]))


def test_single_frame_matches_direct_evaluation(rng):
    f = extract(generate_dataset(DatasetSpec(num_videos=1))[0])
    W, b = rng.standard_normal((4, 8)), rng.standard_normal(4)
    logits = [sum(W[c, d] * f.z[3, d] for d in range(8)) + b[c] for c in range(4)]
    e = np.exp(np.array(logits) - max(logits))
    assert np.allclose(classify(LinearClassifier(W, b), f, [3]), e / e.sum(), rtol=1e-13, atol=0)


def test_dimension_mismatch():
    f = extract(generate_dataset(DatasetSpec(num_videos=1))[0])
    with pytest.raises(ConfigError):
        classify(LinearClassifier.zeros(4, 5), f, [0])


def test_is_correct_tie_rule():
    assert is_correct(np.array([0.0, 1.0, 0.0]), 1)
    assert is_correct(np.full(4, 0.25), 0)
    assert not is_correct(np.full(4, 0.25), 1)


def test_softmax_stable():
    assert np.allclose(softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])


def test_cross_entropy_gradient_matches_finite_differences(rng):
    X = rng.standard_normal((16, 8))
    y = rng.integers(0, 4, 16)
    model = LinearClassifier(rng.standard_normal((4, 8)) * 0.5, rng.standard_normal(4) * 0.5)
    _, gW, gb = cross_entropy_and_grad(model, X, y)

    def loss_at(vec):
        m = LinearClassifier(vec[:32].reshape(4, 8), vec[32:])
        return cross_entropy_and_grad(m, X, y)[0]

    numeric = central_difference(loss_at, np.concatenate([model.W.ravel(), model.b]))
    assert max_relative_error(np.concatenate([gW.ravel(), gb]), numeric) <= 1e-5


def test_lr_zero_keeps_initialisation(rng):
    videos = generate_dataset(DatasetSpec(num_videos=20))
    init = LinearClassifier(rng.standard_normal((4, 8)), rng.standard_normal(4))
    res = train_classifier(videos, hyper=Stage1Hyper(lr=0.0, epochs=3), init=init)
    assert np.array_equal(res.model.W, init.W) and np.array_equal(res.model.b, init.b)


def test_training_reaches_high_accuracy_on_separable_data():
    videos = generate_dataset(DatasetSpec(num_videos=200, signal_strength=5.0, noise_sigma=0.1))
    model = train_classifier(videos, C=4).model
    full = range(videos[0].T)
    acc = np.mean([is_correct(classify(model, extract(v), full), v.label) for v in videos])
    assert acc >= 0.95


@pytest.mark.parametrize("seed", range(5))
def test_training_loss_decreases(seed):
    videos = generate_dataset(DatasetSpec(num_videos=100, master_seed=seed))
    losses = train_classifier(videos, hyper=Stage1Hyper(seed=seed), C=4).losses
    assert losses[-1] < losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch():
    # One batch per epoch: the first step overflows the weights, so epoch 1 sees a non-finite loss.
    videos = generate_dataset(DatasetSpec(num_videos=10, signal_strength=1e200))
    with pytest.raises(DivergenceError) as info:
        train_classifier(videos, hyper=Stage1Hyper(lr=1e300, epochs=3), C=4)
    assert info.value.epoch == 1


def test_training_is_reproducible():
    videos = generate_dataset(DatasetSpec(num_videos=40))
    a = train_classifier(videos, hyper=Stage1Hyper(epochs=5), C=4).model
    b = train_classifier(videos, hyper=Stage1Hyper(epochs=5), C=4).model
    assert np.array_equal(a.W, b.W) and np.array_equal(a.b, b.b)


def test_checkpoints_round_trip(tmp_path, rng):
    m = LinearClassifier(rng.standard_normal((4, 8)), rng.standard_normal(4))
    save_classifier(tmp_path / "m.ckpt", m, {"seed": 3})
    back, meta = load_classifier(tmp_path / "m.ckpt")
    assert np.array_equal(back.W, m.W) and np.array_equal(back.b, m.b)
    assert meta["seed"] == "3"
    save_classifier(tmp_path / "o.ckpt", CoverageOracle(5, 0.2, 1.5))
    assert load_classifier(tmp_path / "o.ckpt")[0] == CoverageOracle(5, 0.2, 1.5)
