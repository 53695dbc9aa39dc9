"""
Training tests

Contrastive loss values, initialization, hard negative mining, pair
gradients, configuration layering and short training runs on a small
synthetic corpus.
"""
import dataclasses

import numpy as np
import pytest

import reid.training as training
from dataio.checkpoint import decode_checkpoint, encode_checkpoint
from dataio.dataset import TrackDataset
from dataio.synth import SynthConfig, synth_tracks
from reid.aggregation import AggregatorVariant
from reid.evaluation import build_protocol
from reid.metrics import MetricKind, MetricParams, distance
from reid.model import Model
from reid.training import (
    EUCLIDEAN_LR,
    LEARNED_METRIC_LR,
    PairSample,
    TrainConfig,
    contrastive_loss,
    contrastive_loss_grad,
    init_params,
    mine_hard_negatives,
    pair_loss_and_grads,
    positives_from_protocol,
    resolve_train_config,
    train,
    write_history_csv,
)
from shared.errors import ConfigError, TrainingError
from tests.gradcheck import assert_grad_close, numeric_grad


@pytest.fixture
def tiny_dataset(small_synth_config):
    entries, matrices = synth_tracks(small_synth_config)
    return TrackDataset.from_matrices(entries, matrices, time_samples=8, seed=1)


@pytest.fixture
def quick_config():
    return TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, embedding_dim=6, time_samples=8, seed=3)


@pytest.mark.unit
class TestContrastiveLoss:
    """Loss table and derivative"""

    @pytest.mark.parametrize(
        "d, y, margin, expected",
        [(0.0, 1, 2.0, 0.0), (1.0, 1, 2.0, 1.0), (0.5, 0, 2.0, 2.25), (3.0, 0, 2.0, 0.0)],
    )
    def test_loss_table(self, d, y, margin, expected):
        assert contrastive_loss(d, y, margin) == expected

    def test_negative_at_margin_is_zero_with_zero_gradient(self):
        assert contrastive_loss(2.0, 0, 2.0) == 0.0
        assert contrastive_loss_grad(2.0, 0, 2.0) == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            y = int(rng.integers(0, 2))
            margin = float(rng.uniform(0.5, 3.0))
            d = float(rng.uniform(0.0, 4.0))
            if abs(d - margin) < 1e-3:
                continue
            h = 1e-5
            numeric = (contrastive_loss(d + h, y, margin) - contrastive_loss(max(d - h, 0.0), y, margin)) / (
                d + h - max(d - h, 0.0)
            )
            assert contrastive_loss_grad(d, y, margin) == pytest.approx(numeric, rel=1e-4, abs=1e-7)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            contrastive_loss(-0.1, 1, 2.0)
        with pytest.raises(ValueError):
            contrastive_loss(0.1, 1, 0.0)


@pytest.mark.unit
class TestConfig:
    """TrainConfig defaults, validation and layering"""

    def test_defaults(self):
        config = TrainConfig()
        assert (config.epochs, config.batch_size, config.margin, config.time_samples) == (30, 32, 2.0, 16)
        assert config.reg_lambda == 0.01

    def test_learning_rate_follows_metric(self):
        assert TrainConfig().effective_learning_rate == EUCLIDEAN_LR
        assert TrainConfig(metric="weighted_euclidean").effective_learning_rate == LEARNED_METRIC_LR
        assert TrainConfig(metric="mahalanobis", learning_rate=0.5).effective_learning_rate == 0.5
        assert LEARNED_METRIC_LR == pytest.approx(3.981e-5, rel=1e-3)

    @pytest.mark.parametrize(
        "field, value",
        [("epochs", -1), ("batch_size", 0), ("margin", 0.0), ("metric", "cosine"), ("variant", "rnn")],
    )
    def test_invalid_values_rejected(self, field, value):
        with pytest.raises(ConfigError):
            TrainConfig(**{field: value}).validate()

    def test_flags_override_file_override_defaults(self):
        config = resolve_train_config({"epochs": 5, "margin": 1.5}, {"epochs": 7, "margin": None})
        assert config.epochs == 7
        assert config.margin == 1.5
        assert config.batch_size == 32

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            resolve_train_config({"epoch": 3}, {})


@pytest.mark.unit
class TestInitialization:
    """Seeded parameter initialization"""

    def test_shapes_for_full_mahalanobis(self):
        agg, metric = init_params(1, 10, 4, MetricKind.MAHALANOBIS)
        assert agg.W1.shape == (4, 10) and agg.b1.shape == (4,) and agg.W2.shape == (4, 8)
        assert not np.any(agg.b1)
        assert metric.W.shape == (4, 4)
        np.testing.assert_allclose(metric.W, np.eye(4), atol=0.1)

    def test_weighted_init_is_nonnegative_near_one(self):
        _, metric = init_params(2, 10, 64, MetricKind.WEIGHTED_EUCLIDEAN)
        assert np.all(metric.w >= 0)
        assert abs(metric.w.mean() - 1.0) < 0.05

    def test_weighted_init_statistics_at_large_dimension(self):
        _, metric = init_params(9, 100_000, 4, MetricKind.WEIGHTED_EUCLIDEAN, AggregatorVariant.AVG)
        assert metric.dim == 100_000
        assert abs(metric.w.mean() - 1.0) < 1e-2
        assert abs(metric.w.std() - 0.1) < 1e-2

    def test_same_seed_same_parameters(self):
        a, _ = init_params(5, 6, 3, MetricKind.EUCLIDEAN)
        b, _ = init_params(5, 6, 3, MetricKind.EUCLIDEAN)
        for name in a.arrays():
            np.testing.assert_array_equal(a.arrays()[name], b.arrays()[name])

    def test_avg_variant_has_no_parameters(self):
        agg, metric = init_params(1, 10, 4, MetricKind.EUCLIDEAN, AggregatorVariant.AVG)
        assert agg.arrays() == {}
        assert metric.dim == 10


@pytest.mark.unit
class TestHardNegativeMining:
    """Closest wrong-identity candidates"""

    def test_picks_closest_candidate(self):
        embeddings = {
            "q": np.array([0.0, 0.0]),
            "p": np.array([0.1, 0.0]),
            "far": np.array([3.0, 0.0]),
            "near": np.array([0.5, 0.0]),
        }
        positives = [PairSample("q", "p", 1, ("far", "near"))]
        mined = mine_hard_negatives(embeddings, positives, MetricParams.euclidean(2))
        assert mined == [PairSample("q", "near", 0)]

    def test_ties_broken_by_track_id(self):
        embeddings = {"q": np.zeros(2), "b": np.array([1.0, 0.0]), "a": np.array([0.0, 1.0])}
        positives = [PairSample("q", "x", 1, ("b", "a"))]
        mined = mine_hard_negatives(embeddings, positives, MetricParams.euclidean(2))
        assert mined[0].gallery == "a"

    def test_k_negatives_per_positive(self):
        embeddings = {f"n{i}": np.array([float(i), 0.0]) for i in range(5)}
        embeddings["q"] = np.zeros(2)
        positives = [PairSample("q", "p", 1, tuple(f"n{i}" for i in range(5)))]
        mined = mine_hard_negatives(embeddings, positives, MetricParams.euclidean(2), per_positive=3)
        assert [m.gallery for m in mined] == ["n0", "n1", "n2"]

    @pytest.mark.parametrize("kind", list(MetricKind))
    def test_matches_exhaustive_scan(self, kind):
        rng = np.random.default_rng(50)
        dim = 3
        for _ in range(30):
            if kind is MetricKind.WEIGHTED_EUCLIDEAN:
                metric = MetricParams(kind, dim, w=rng.integers(1, 4, size=dim).astype(float))
            elif kind is MetricKind.MAHALANOBIS:
                metric = MetricParams(kind, dim, W=np.eye(dim) + rng.normal(0.0, 0.3, size=(dim, dim)))
            else:
                metric = MetricParams.euclidean(dim)
            # grid values tie exactly; a mixing W needs continuous values instead
            if kind is MetricKind.MAHALANOBIS:
                embeddings = {f"t{i:02d}": rng.normal(size=dim) for i in range(int(rng.integers(2, 15)))}
            else:
                embeddings = {
                    f"t{i:02d}": rng.integers(-2, 3, size=dim).astype(float) for i in range(int(rng.integers(2, 15)))
                }
            ids = sorted(embeddings)
            positives = []
            for q in ids[: int(rng.integers(1, 4))]:
                others = [t for t in ids if t != q]
                picked = rng.choice(len(others), size=int(rng.integers(1, len(others) + 1)), replace=False)
                positives.append(PairSample(q, "p", 1, tuple(others[i] for i in picked)))
            k = int(rng.integers(1, 5))

            expected = []
            for pair in positives:
                query = embeddings[pair.query]
                scan = sorted(pair.candidates, key=lambda c: (distance(query, embeddings[c], metric), c))
                expected.extend(PairSample(pair.query, c, 0) for c in scan[:k])
            assert mine_hard_negatives(embeddings, positives, metric, per_positive=k) == expected

    def test_positive_without_candidates_skipped(self):
        mined = mine_hard_negatives({"q": np.zeros(2)}, [PairSample("q", "p", 1, ())], MetricParams.euclidean(2))
        assert mined == []


@pytest.mark.unit
class TestPairGradients:
    """End-to-end pair gradients through both branches"""

    @pytest.mark.parametrize("kind", list(MetricKind))
    @pytest.mark.parametrize("label", [0, 1])
    def test_pair_gradients_match_finite_differences(self, kind, label):
        rng = np.random.default_rng(40 + label)
        for _ in range(5):
            N, M = 4, 3
            agg, metric = init_params(int(rng.integers(1000)), N, M, kind)
            model = Model(agg, metric)
            Xq = rng.normal(size=(int(rng.integers(2, 6)), N))
            Xg = rng.normal(size=(int(rng.integers(2, 6)), N))
            margin = 5.0

            def objective():
                return pair_loss_and_grads(model, Xq, Xg, label, margin)[0]

            _, _, grads = pair_loss_and_grads(model, Xq, Xg, label, margin)
            for name, value in model.parameters().items():
                assert_grad_close(grads[name], numeric_grad(objective, value))

    @pytest.mark.parametrize("kind", list(MetricKind))
    def test_identical_positive_pair_has_zero_gradient(self, kind):
        rng = np.random.default_rng(44)
        agg, metric = init_params(3, 5, 4, kind)
        model = Model(agg, metric)
        X = rng.normal(size=(6, 5))
        loss, d, grads = pair_loss_and_grads(model, X, X, 1, 2.0)
        assert loss == 0.0 and d == 0.0
        assert set(grads) == set(model.parameters())
        for value in grads.values():
            np.testing.assert_array_equal(value, 0.0)


@pytest.mark.integration
class TestTrainLoop:
    """Short training runs on a tiny corpus"""

    def test_history_and_epoch_counter(self, tiny_dataset, quick_config):
        result = train(tiny_dataset, quick_config)
        assert [s.epoch for s in result.history] == [1, 2]
        assert result.checkpoint.epoch == 2
        assert all(np.isfinite(s.mean_loss) for s in result.history)

    def test_zero_epochs_returns_initialization(self, tiny_dataset, quick_config):
        config = dataclasses.replace(quick_config, epochs=0)
        result = train(tiny_dataset, config)
        agg, _ = init_params(config.seed, tiny_dataset.feature_dim, config.embedding_dim, MetricKind.EUCLIDEAN)
        assert result.history == []
        for name, value in agg.arrays().items():
            np.testing.assert_array_equal(result.checkpoint.model.parameters()[name], value)

    def test_training_is_deterministic(self, tiny_dataset, quick_config):
        a = train(tiny_dataset, quick_config).checkpoint.model.parameters()
        b = train(tiny_dataset, quick_config).checkpoint.model.parameters()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_weights_nonnegative_after_every_step(self, tiny_dataset, quick_config, mocker):
        config = dataclasses.replace(quick_config, metric="weighted_euclidean", learning_rate=0.5)
        original = training.adam_step
        minima = []

        def checked(model, params, grads, optimizer):
            original(model, params, grads, optimizer)
            minima.append(float(model.metric.w.min()))

        mocker.patch("reid.training.adam_step", side_effect=checked)
        train(tiny_dataset, config)
        assert minima and min(minima) >= 0.0

    def test_mahalanobis_records_regularizer(self, tiny_dataset, quick_config):
        config = dataclasses.replace(quick_config, metric="mahalanobis", epochs=1)
        result = train(tiny_dataset, config)
        assert result.history[0].regularizer > 0.0

    def test_loss_decreases_on_separable_corpus(self):
        separable = SynthConfig(
            identities=2, tracks_per_identity=2, frames=8, dim=6, noise=0.0, corruption=0.0, sessions=1, seed=4
        )
        entries, matrices = synth_tracks(separable)
        dataset = TrackDataset.from_matrices(entries, matrices, time_samples=8, seed=0)
        config = TrainConfig(epochs=5, batch_size=4, learning_rate=1e-2, embedding_dim=4, time_samples=8, seed=2)
        history = train(dataset, config).history
        assert history[-1].mean_loss < history[0].mean_loss

    def test_non_finite_gradient_aborts_epoch_without_update(self, tiny_dataset, quick_config, mocker):
        config = dataclasses.replace(quick_config, epochs=1)
        before = train(tiny_dataset, dataclasses.replace(config, epochs=0)).checkpoint.model.parameters()

        def poisoned(model, Xq, Xg, label, margin):
            return 1.0, 1.0, {name: np.full_like(v, np.nan) for name, v in model.parameters().items()}

        mocker.patch("reid.training.pair_loss_and_grads", side_effect=poisoned)
        result = train(tiny_dataset, config)
        assert result.history[0].aborted
        after = result.checkpoint.model.parameters()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])

    def test_resume_continues_epoch_count(self, tiny_dataset, quick_config):
        first = train(tiny_dataset, dataclasses.replace(quick_config, epochs=1))
        resumed = train(tiny_dataset, quick_config, resume=first.checkpoint)
        assert [s.epoch for s in resumed.history] == [2]

    def test_resume_steps_with_the_configured_learning_rate(self, tiny_dataset, quick_config):
        raw = encode_checkpoint(train(tiny_dataset, dataclasses.replace(quick_config, epochs=1)).checkpoint)
        start = decode_checkpoint(raw).model.parameters()
        moved = {}
        for lr in (1e-7, 1e-2):
            config = dataclasses.replace(quick_config, learning_rate=lr)
            result = train(tiny_dataset, config, resume=decode_checkpoint(raw))
            assert result.checkpoint.optimizer.lr == lr
            after = result.checkpoint.model.parameters()
            moved[lr] = max(float(np.abs(after[name] - start[name]).max()) for name in start)
        assert moved[1e-7] < 1e-4 < moved[1e-2]

    def test_resume_rejects_other_metric(self, tiny_dataset, quick_config):
        first = train(tiny_dataset, dataclasses.replace(quick_config, epochs=0))
        with pytest.raises(TrainingError):
            train(tiny_dataset, dataclasses.replace(quick_config, metric="mahalanobis"), resume=first.checkpoint)

    def test_no_positive_pairs_is_an_error(self, quick_config):
        entries, matrices = synth_tracks(SynthConfig(identities=3, tracks_per_identity=1, frames=4, dim=5, seed=1))
        dataset = TrackDataset.from_matrices(entries, matrices, time_samples=8)
        with pytest.raises(TrainingError):
            train(dataset, quick_config)

    def test_positives_come_from_protocol(self, tiny_dataset):
        cases = build_protocol(tiny_dataset.entries)
        positives = positives_from_protocol(cases)
        assert len(positives) == len(cases)
        assert all(p.label == 1 and p.candidates for p in positives)

    def test_history_csv(self, tiny_dataset, quick_config, tmp_path):
        result = train(tiny_dataset, quick_config)
        path = tmp_path / "loss.csv"
        write_history_csv(result.history, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,mean_loss,mean_pos_d,mean_neg_d,regularizer"
        assert len(lines) == 3
