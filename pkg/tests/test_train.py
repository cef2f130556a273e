from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from retemp.config import TrainConfig
from retemp.data import TkgDataset, expected_random_mrr, generate_synthetic
from retemp.errors import TrainingError
from retemp.model import ReTemp
from retemp.train import (EarlyStopping, TemporalGraph, aggregate_metrics, ensemble_scores,
                          evaluate, evaluate_many, fit, rank_query, train_epoch)

# ---------------------------------------------------------------- ranking


def test_filtered_competitor_does_not_count():
    scores = np.array([0.1, 0.9, 0.95, 0.5, 0.2])
    assert rank_query(scores, 1, {1, 2}) == 1
    assert rank_query(scores, 1, set()) == 2


def test_gold_highest_is_rank_one():
    assert rank_query(np.array([0.2, 0.7, 0.1]), 1) == 1


def test_ties_go_to_gold():
    assert rank_query(np.array([0.5, 0.5, 0.5, 0.1]), 2) == 1


@given(st.data())
def test_rank_matches_sort_oracle(data):
    n = data.draw(st.integers(2, 30))
    scores = np.array(data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n)), dtype=float)
    gold = data.draw(st.integers(0, n - 1))
    filt = set(data.draw(st.lists(st.integers(0, n - 1), max_size=n)))
    assert rank_query(scores, gold, filt) == oracles.filtered_rank(scores, gold, filt)


@given(st.data())
def test_filtering_only_lowers_rank_and_keeps_gold(data):
    n = data.draw(st.integers(2, 30))
    scores = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n)))
    gold = data.draw(st.integers(0, n - 1))
    filt = set(data.draw(st.lists(st.integers(0, n - 1), max_size=n))) | {gold}
    assert 1 <= rank_query(scores, gold, filt) <= rank_query(scores, gold)


@given(st.data())
def test_lowering_gold_score_never_improves_rank(data):
    n = data.draw(st.integers(2, 20))
    scores = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n)))
    gold = data.draw(st.integers(0, n - 1))
    lower = scores.copy()
    lower[gold] -= data.draw(st.floats(0.01, 20))
    assert rank_query(lower, gold) >= rank_query(scores, gold)
    if np.any((scores < scores[gold]) & (scores > lower[gold])):
        assert aggregate_metrics([rank_query(lower, gold)]).mrr < \
            aggregate_metrics([rank_query(scores, gold)]).mrr


def test_metrics_example():
    r = aggregate_metrics([1, 2, 4])
    assert r.mrr == pytest.approx(7 / 12)
    assert (r.hits1, r.hits3, r.hits10) == (pytest.approx(1 / 3), pytest.approx(2 / 3), 1.0)


def test_metrics_extremes():
    best = aggregate_metrics([1] * 5)
    assert (best.mrr, best.hits1, best.hits3, best.hits10) == (1.0, 1.0, 1.0, 1.0)
    assert aggregate_metrics([11, 50, 12]).hits10 == 0.0


@given(st.lists(st.integers(1, 100), min_size=1, max_size=50))
def test_metrics_match_exact_fractions(ranks):
    r = aggregate_metrics(ranks)
    n = len(ranks)
    assert r.mrr == pytest.approx(float(sum(Fraction(1, k) for k in ranks) / n), rel=1e-12)
    for k, value in [(1, r.hits1), (3, r.hits3), (10, r.hits10)]:
        assert value == float(Fraction(sum(x <= k for x in ranks), n))


# ---------------------------------------------------------------- ensembles


def test_pooling_examples():
    s = [np.array([0.1, 0.9]), np.array([0.3, 0.7])]
    np.testing.assert_allclose(ensemble_scores(s, "avg"), [0.2, 0.8])
    np.testing.assert_allclose(ensemble_scores(s, "max"), [0.3, 0.9])
    np.testing.assert_allclose(ensemble_scores(s, "min"), [0.1, 0.7])
    with pytest.raises(ValueError):
        ensemble_scores(s, "median")


@pytest.mark.parametrize("pooling", ["avg", "max", "min"])
def test_identical_models_ensemble_like_one(tiny_graph, tiny_config, pooling):
    model = ReTemp(12, 3, tiny_graph.dataset.num_snapshots, tiny_config)
    single = evaluate(model, tiny_graph, "test")
    pooled = evaluate_many([model, model, model], tiny_graph, "test", pooling)
    assert np.array_equal(single.ranks, pooled.ranks)


# ---------------------------------------------------------------- training


def test_early_stopping_plateau_from_epoch_three():
    stop = EarlyStopping(5)
    history = [0.1, 0.2, 0.3] + [0.3] * 20
    for epoch, value in enumerate(history, start=1):
        stop.update(value)
        if stop.should_stop:
            break
    assert epoch == 8 and stop.best_epoch == 3


def test_ever_improving_runs_to_max_epochs(tiny_graph, monkeypatch):
    cfg = TrainConfig(dim=4, history_length=1, layers=1, channels=2, epochs=4, patience=1, seed=0)
    model = ReTemp(12, 3, tiny_graph.dataset.num_snapshots, cfg)
    monotone = iter([0.1, 0.2, 0.3, 0.4, 0.5])
    monkeypatch.setattr("retemp.train.evaluate",
                        lambda *a, **k: type("R", (), {"mrr": next(monotone)})())
    ckpt = fit(model, tiny_graph)
    assert ckpt.epoch == 4 and len(ckpt.val_history) == 4


def test_single_training_timestamp_has_no_history():
    ds = TkgDataset(3, 1, 3, train=np.array([[0, 0, 1, 0, 0]]), valid=np.array([[1, 0, 2, 1, 0]]),
                    test=np.array([[2, 0, 0, 2, 0]]))
    graph = TemporalGraph.from_dataset(ds)
    model = ReTemp(3, 1, 3, TrainConfig(dim=4, channels=2))
    with pytest.raises(TrainingError, match="history"):
        train_epoch(model, graph)


def test_cyclic_loss_decreases_over_first_epochs():
    graph = TemporalGraph.from_dataset(generate_synthetic(0, 20, 4, 30, "cyclic-deterministic"))
    cfg = TrainConfig(dim=32, history_length=3, channels=8, seed=0)
    model = ReTemp(20, 4, 30, cfg)
    losses = [train_epoch(model, graph) for _ in range(5)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_same_seed_same_best_checkpoint(tiny_graph, tiny_config):
    a = fit(ReTemp(12, 3, tiny_graph.dataset.num_snapshots, tiny_config), tiny_graph)
    b = fit(ReTemp(12, 3, tiny_graph.dataset.num_snapshots, tiny_config), tiny_graph)
    assert a.epoch == b.epoch and a.losses == b.losses
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


# ---------------------------------------------------------------- evaluation


def test_oracle_model_gets_perfect_mrr(tiny_graph, tiny_config, monkeypatch):
    model = ReTemp(12, 3, tiny_graph.dataset.num_snapshots, tiny_config)

    def perfect(snapshots, batch, training=False, **_):
        scores = np.zeros((len(batch), 12))
        scores[np.arange(len(batch)), batch.queries[:, 2]] = 1.0
        return type("S", (), {"data": scores})()

    monkeypatch.setattr(model, "scores", perfect)
    assert evaluate(model, tiny_graph, "test").mrr == 1.0


def test_random_model_near_chance():
    ds = generate_synthetic(11, 20, 5, 60, "uniform-random", facts_per_snapshot=50)
    graph = TemporalGraph.from_dataset(ds)
    model = ReTemp(20, 5, 60, TrainConfig(dim=8, history_length=2, channels=4, seed=3))
    report = evaluate(model, graph, "test")
    assert report.num_queries >= 500
    assert abs(report.mrr - expected_random_mrr(20)) <= 0.05
    assert expected_random_mrr(20) == pytest.approx(0.18, abs=0.005)


def test_evaluation_is_repeatable(tiny_graph, tiny_config):
    model = ReTemp(12, 3, tiny_graph.dataset.num_snapshots, tiny_config)
    assert evaluate(model, tiny_graph, "valid").to_dict() == evaluate(model, tiny_graph, "valid").to_dict()


def test_empty_split_is_an_error(tiny_config):
    ds = generate_synthetic(0, 10, 2, 10)
    ds.test = ds.test[:0]
    graph = TemporalGraph.from_dataset(ds)
    with pytest.raises(TrainingError):
        evaluate(ReTemp(10, 2, 10, tiny_config), graph, "test")
