"""
Experiment runner tests

Identity splits, learning-rate selection and row averaging. Training is
patched out where only the bookkeeping is under test.
"""
import pytest

from dataio.dataset import TrackDataset
from dataio.synth import synth_tracks
from reid.experiments import (
    ExperimentRow,
    identity_halves,
    mean_row,
    random_identity_splits,
    run_metric_comparison,
    run_random_splits,
    select_learning_rate,
    split_dataset,
)
from reid.training import TrainConfig
from shared.errors import ConfigError, ProtocolError


@pytest.fixture
def dataset(small_synth_config):
    entries, matrices = synth_tracks(small_synth_config)
    return TrackDataset.from_matrices(entries, matrices, time_samples=8, seed=0)


def row(name, mAP, hit1=None, loss=None):
    hit1 = mAP if hit1 is None else hit1
    return ExperimentRow(
        name=name,
        variant="full",
        metric="euclidean",
        embedding_dim=4,
        mAP=mAP,
        hit_at={1: hit1, 5: 1.0, 10: 1.0, 20: 1.0},
        final_loss=loss,
    )


def scripted_runs(mocker, maps):
    """Patch training so the i-th run reports maps[i]; returns the call list."""
    calls = []

    def fake(name, split, config, threads=1):
        calls.append((name, split, config))
        return None, row(name, maps[len(calls) - 1]), None

    mocker.patch("reid.experiments.train_and_evaluate", side_effect=fake)
    return calls


@pytest.mark.unit
class TestIdentitySplits:
    def test_halves_partition_identities(self, dataset):
        split = identity_halves(dataset, 3)
        train_ids = {e.identity for e in split.train.entries}
        test_ids = {e.identity for e in split.test.entries}
        assert not train_ids & test_ids
        assert len(train_ids) == 3 and len(test_ids) == 3
        assert len(split.train) + len(split.test) == len(dataset)

    def test_halves_keep_whole_identities(self, dataset):
        split = identity_halves(dataset, 3)
        counts = {}
        for e in split.train.entries:
            counts[e.identity] = counts.get(e.identity, 0) + 1
        assert set(counts.values()) == {3}

    def test_same_seed_same_split(self, dataset):
        a = identity_halves(dataset, [5, 0])
        b = identity_halves(dataset, [5, 0])
        assert a.train.track_ids == b.train.track_ids

    def test_repeated_splits_differ(self, dataset):
        splits = random_identity_splits(dataset, 6, seed=1)
        assert len(splits) == 6
        assert len({tuple(s.train.track_ids) for s in splits}) > 1

    def test_zero_splits_rejected(self, dataset):
        with pytest.raises(ConfigError):
            random_identity_splits(dataset, 0)

    def test_single_identity_cannot_be_halved(self, dataset):
        three = identity_halves(dataset, 0).train
        one = identity_halves(three, 0).train
        assert len({e.identity for e in one.entries}) == 1
        with pytest.raises(ProtocolError):
            identity_halves(one, 0)


@pytest.mark.unit
class TestRows:
    def test_mean_row_averages_scores_and_losses(self):
        rows = [row("a", 0.5, hit1=0.25, loss=1.0), row("b", 1.0, hit1=0.75, loss=None), row("c", 0.0, loss=3.0)]
        mean = mean_row("mean", rows)
        assert mean.name == "mean"
        assert mean.mAP == pytest.approx(0.5)
        assert mean.hit_at[1] == pytest.approx((0.25 + 0.75 + 0.0) / 3)
        assert mean.final_loss == pytest.approx(2.0)

    def test_random_splits_end_with_their_mean(self, dataset, mocker):
        calls = scripted_runs(mocker, [0.2, 0.4, 0.9])
        rows = run_random_splits(dataset, TrainConfig(seed=2), n_splits=3)
        assert [r.name for r in rows] == ["split00", "split01", "split02", "mean"]
        assert rows[-1].mAP == pytest.approx(0.5)
        assert len({tuple(split.test.track_ids) for _, split, _ in calls}) > 1

    def test_metric_subset(self, dataset, mocker):
        calls = scripted_runs(mocker, [0.1, 0.2])
        rows = run_metric_comparison(split_dataset(dataset), TrainConfig(), metrics=["weighted_euclidean", "euclidean"])
        assert [r.name for r in rows] == ["weighted_euclidean", "euclidean"]
        assert [config.metric for _, _, config in calls] == ["weighted_euclidean", "euclidean"]
        assert all(config.variant == "full" for _, _, config in calls)


@pytest.mark.unit
class TestLearningRateSelection:
    def test_best_validation_map_wins(self, dataset, mocker):
        calls = scripted_runs(mocker, [0.3, 0.8, 0.5])
        lr, rows = select_learning_rate(dataset, TrainConfig(), candidates=(1e-5, 1e-4, 1e-3))
        assert lr == 1e-4
        assert [config.learning_rate for _, _, config in calls] == [1e-5, 1e-4, 1e-3]
        assert [r.name for r in rows] == ["lr=1e-05", "lr=0.0001", "lr=0.001"]

    def test_ties_go_to_the_earlier_candidate(self, dataset, mocker):
        scripted_runs(mocker, [0.7, 0.7])
        lr, _ = select_learning_rate(dataset, TrainConfig(), candidates=(1e-3, 1e-2))
        assert lr == 1e-3

    def test_validation_identities_are_held_out(self, dataset, mocker):
        calls = scripted_runs(mocker, [0.1])
        select_learning_rate(dataset, TrainConfig(), candidates=(1e-3,))
        _, split, _ = calls[0]
        assert not {e.identity for e in split.train.entries} & {e.identity for e in split.test.entries}

    def test_no_candidates(self, dataset):
        with pytest.raises(ConfigError):
            select_learning_rate(dataset, TrainConfig(), candidates=())
