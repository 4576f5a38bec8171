import numpy as np
import pytest
from hypothesis import given, strategies as st

from ocsampler.budget import BudgetConfig, train_budget
from ocsampler.classifier import CoverageOracle
from ocsampler.core import CostModel, DatasetSpec, DomainError, generate_dataset
from ocsampler.evalbench import (
    STRATEGY_KINDS,
    MissingModelError,
    Models,
    Strategy,
    evaluate,
    frameexit_order,
    parse_selections,
    select,
    selections_text,
    sweep_budget,
    sweep_csv,
    transfer_selections,
    uniform_indices,
)
from ocsampler.policy import ClipSelection, PolicyParams


class AlwaysRight:
    def predict(self, video, features, clip):
        p = np.zeros(4)
        p[video.label] = 1.0
        return p


@pytest.fixture(scope="module")
def small():
    return generate_dataset(DatasetSpec(num_videos=30, master_seed=2))


def test_uniform_examples():
    assert uniform_indices(10, 2) == [0, 9]
    assert uniform_indices(10, 1) == [4]
    assert uniform_indices(5, 5) == [0, 1, 2, 3, 4]


def test_frameexit_example():
    assert frameexit_order(9)[:3] == [4, 0, 8]
    assert sorted(frameexit_order(9)) == list(range(9))


@given(st.integers(1, 40), st.data())
def test_uniform_indices_are_distinct_and_sorted(T, data):
    N = data.draw(st.integers(1, T))
    idx = uniform_indices(T, N)
    assert len(idx) == N and idx == sorted(set(idx))
    assert 0 <= idx[0] and idx[-1] < T


@given(st.integers(1, 60))
def test_frameexit_is_permutation(T):
    order = frameexit_order(T)
    assert sorted(order) == list(range(T))
    assert order[0] == (T - 1) // 2


def test_random_full_set(small):
    sel = select(Strategy("random"), small[0], 10, rng=np.random.default_rng(0))
    assert sel.as_set == frozenset(range(10))


def test_fixed_length_windows(small):
    sel = select(Strategy("fixed_length", window="center"), small[0], 4)
    assert sel.indices == (3, 4, 5, 6)
    sel = select(Strategy("fixed_length"), small[0], 4, rng=np.random.default_rng(1))
    assert list(sel.indices) == list(range(sel.indices[0], sel.indices[0] + 4))


def test_strategy_validation():
    with pytest.raises(Exception):
        Strategy("nope")


def test_n_out_of_range(small):
    with pytest.raises(DomainError):
        select(Strategy("uniform"), small[0], 11)


def test_always_correct_classifier_scores_one(small):
    models = Models(AlwaysRight(), PolicyParams.zeros(8))
    report = evaluate(small, [Strategy(k) for k in STRATEGY_KINDS if k != "learned_adaptive"], [1, 2, 5],
                      AlwaysRight(), models)
    assert all(r.top1_accuracy == 1.0 for r in report.rows)
    assert report.row("uniform", 5).mean_cost == 10 + 50


@pytest.mark.parametrize("kind, missing", [("learned", "policy"), ("learned_adaptive", "policy")])
def test_missing_model(small, kind, missing):
    with pytest.raises(MissingModelError) as info:
        evaluate(small, [Strategy(kind)], [2], CoverageOracle(4))
    assert info.value.field == missing and info.value.code == "E_MISSING_MODEL"
    assert kind in str(info.value)


def test_evaluate_is_independent_of_dataset_order(small):
    strategies = [Strategy("random", seed=3), Strategy("uniform"), Strategy("fixed_length")]
    a = evaluate(small, strategies, [2, 3], CoverageOracle(4), seed=7)
    b = evaluate(small[::-1], strategies, [2, 3], CoverageOracle(4), seed=7)
    assert a.to_csv() == b.to_csv()


def test_selections_text_round_trip(small):
    report = evaluate(small, [Strategy("random")], [3], CoverageOracle(4))
    sels = report.selections[("random", 3)]
    back = parse_selections(selections_text(sels))
    assert {k: v.as_set for k, v in back.items()} == {k: v.as_set for k, v in sels.items()}


def test_report_outputs(small):
    report = evaluate(small, [Strategy("uniform")], [2], CoverageOracle(4))
    assert report.to_csv().splitlines()[0] == "strategy,N,accuracy,mean_frames,mean_cost,salient_recall"
    assert '"rows"' in report.to_json({"seed": 0})


def test_learned_beats_fixed_orders(trained_policy, standard_env):
    _, test = standard_env
    oracle = CoverageOracle(4)
    models = Models(oracle, trained_policy.params)
    report = evaluate(test, [Strategy("learned"), Strategy("uniform"), Strategy("random")], [2], oracle, models)
    learned, uniform = report.row("learned", 2), report.row("uniform", 2)
    assert learned.top1_accuracy >= uniform.top1_accuracy
    assert learned.salient_recall > uniform.salient_recall


def test_uniform_and_random_tie_in_expectation():
    # Salient positions are uniform, so every fixed N-subset hits at least one
    # with the same probability as a random N-subset.
    from math import comb
    T, s, N = 10, 2, 2
    videos = generate_dataset(DatasetSpec(num_videos=4000, master_seed=9))
    fixed = set(uniform_indices(T, N))
    hit = np.mean([bool(fixed & v.salient_set) for v in videos])
    expected = 1 - comb(T - s, N) / comb(T, N)
    assert abs(hit - expected) <= 4 * np.sqrt(expected * (1 - expected) / len(videos))


def test_transfer_identity(small):
    oracle = CoverageOracle(4)
    report = evaluate(small, [Strategy("random")], [3], oracle)
    sels = report.selections[("random", 3)]
    t = transfer_selections(small, sels, oracle)
    assert t.row("transfer").top1_accuracy == report.row("random", 3).top1_accuracy


def test_transfer_missing_ids(small):
    sels = {v.id: ClipSelection((0, 1)) for v in small[:-2]}
    with pytest.raises(DomainError, match=str(small[-1].id)):
        transfer_selections(small, sels, CoverageOracle(4))


def test_transfer_empty():
    assert transfer_selections([], {}, CoverageOracle(4)).rows == []


def test_transfer_under_sharper_oracle(trained_policy, standard_env):
    _, test = standard_env
    a = CoverageOracle(4, gamma=1.0)
    report = evaluate(test, [Strategy("learned")], [2], a, Models(a, trained_policy.params))
    t = transfer_selections(test, report.selections[("learned", 2)], CoverageOracle(4, gamma=2.0))
    assert t.row("transfer").top1_accuracy >= t.row("uniform").top1_accuracy


def test_single_cell_sweep_equals_adaptive_evaluation(small):
    oracle = CoverageOracle(4)
    policy = PolicyParams.random(8, np.random.default_rng(0), scale=0.3)
    cfg = BudgetConfig(epochs=5, hidden=8)
    cells = sweep_budget(small[:20], small[20:], Models(oracle, policy), [0.5], [2.0], cfg)
    head = train_budget(small[:20], oracle, cfg).head
    row = evaluate(small[20:], [Strategy("learned_adaptive")], [], oracle, Models(oracle, policy, head)).rows[0]
    assert len(cells) == 1 and cells[0].valid
    assert (cells[0].mean_frames, cells[0].accuracy, cells[0].mean_cost) == (row.mean_frames, row.top1_accuracy, row.mean_cost)
    assert sweep_csv(cells).count("\n") == 2


def test_sweep_needs_policy(small):
    with pytest.raises(MissingModelError):
        sweep_budget(small, small, Models(CoverageOracle(4)), [0.5], [2.0])
