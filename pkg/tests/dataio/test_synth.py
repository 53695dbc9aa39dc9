"""Synthetic corpus and dataset loading tests"""
import dataclasses

import numpy as np
import pytest

from dataio.dataset import TrackDataset, load_dataset
from dataio.synth import MANIFEST_NAME, SynthConfig, synth_generate, synth_tracks
from reid.evaluation import build_protocol
from shared.errors import ConfigError, UnknownTrackError


@pytest.mark.unit
class TestSynthTracks:
    def test_counts_and_shapes(self, small_synth_config):
        entries, matrices = synth_tracks(small_synth_config)
        assert len(entries) == 6 * 3
        assert all(m.shape == (12, 8) for m in matrices)
        assert len({e.track_id for e in entries}) == len(entries)

    def test_clean_frames_are_unit_vectors(self, small_synth_config):
        entries, matrices = synth_tracks(small_synth_config)
        for entry, matrix in zip(entries, matrices):
            clean = np.setdiff1d(np.arange(matrix.shape[0]), entry.corrupted_frames)
            np.testing.assert_allclose(np.linalg.norm(matrix[clean], axis=1), 1.0, atol=1e-6)

    def test_distractors_share_the_occluder_direction(self):
        config = SynthConfig(identities=4, tracks_per_identity=2, frames=16, dim=12, corruption=0.5, distractors=3)
        entries, matrices = synth_tracks(config)
        rows = np.concatenate([m[e.corrupted_frames] for e, m in zip(entries, matrices)])
        assert len(rows) > 0
        # at most `distractors` distinct pool vectors, each far from unit norm
        assert len(np.unique(rows.round(4), axis=0)) <= 3
        norms = np.linalg.norm(rows, axis=1)
        assert norms.min() >= config.occluder - config.distractor_scale - 1e-3
        assert norms.max() <= config.occluder + config.distractor_scale + 1e-3
        # the mean pool vector points along the shared component
        mean = rows.mean(axis=0)
        assert np.linalg.norm(mean) > config.occluder - config.distractor_scale

    def test_occluder_leaves_clean_frames_and_corruption_pattern_alone(self, small_synth_config):
        plain = dataclasses.replace(small_synth_config, distractor_scale=1.0, occluder=0.0)
        a_entries, a = synth_tracks(small_synth_config)
        b_entries, b = synth_tracks(plain)
        assert a_entries == b_entries
        for entry, x, y in zip(a_entries, a, b):
            clean = np.setdiff1d(np.arange(x.shape[0]), entry.corrupted_frames)
            np.testing.assert_array_equal(x[clean], y[clean])

    def test_plain_distractors_are_unit_vectors(self):
        config = SynthConfig(
            identities=3, tracks_per_identity=2, frames=10, dim=6, corruption=0.6, distractor_scale=1.0, occluder=0.0
        )
        _, matrices = synth_tracks(config)
        for m in matrices:
            np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0, atol=1e-6)

    def test_noise_free_identity_frames_identical(self):
        config = SynthConfig(identities=3, tracks_per_identity=2, frames=5, dim=4, noise=0.0, corruption=0.0)
        entries, matrices = synth_tracks(config)
        for e, m in zip(entries, matrices):
            assert np.all(m == m[0])
        assert np.array_equal(matrices[0][0], matrices[1][0])
        assert all(e.corrupted_frames == [] for e in entries)

    def test_full_corruption_marks_every_frame(self):
        config = SynthConfig(identities=2, tracks_per_identity=2, frames=6, dim=4, corruption=1.0, distractors=2)
        entries, _ = synth_tracks(config)
        assert all(e.corrupted_frames == list(range(6)) for e in entries)

    def test_deterministic(self, small_synth_config):
        a_entries, a = synth_tracks(small_synth_config)
        b_entries, b = synth_tracks(small_synth_config)
        assert a_entries == b_entries
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_protocol_is_constructible(self, small_synth_config):
        entries, _ = synth_tracks(small_synth_config)
        cases = build_protocol(entries)
        # 6 identities, 3 tracks each in 3 videos, ordered pairs
        assert len(cases) == 6 * 3 * 2
        assert all(len(c.negatives) == 2 for c in cases)

    def test_sessions_partition_identities(self, small_synth_config):
        entries, _ = synth_tracks(small_synth_config)
        by_identity = {}
        for e in entries:
            by_identity.setdefault(e.identity, set()).add(e.session)
        assert all(len(s) == 1 for s in by_identity.values())
        assert {e.session for e in entries} == {"s0", "s1"}

    @pytest.mark.parametrize(
        "field, value", [("identities", 0), ("corruption", 1.5), ("noise", -0.1), ("occluder", -1.0)]
    )
    def test_invalid_config(self, field, value):
        with pytest.raises(ConfigError):
            synth_tracks(SynthConfig(**{field: value}))

    def test_distractors_need_some_magnitude(self):
        with pytest.raises(ConfigError):
            synth_tracks(SynthConfig(distractor_scale=0.0, occluder=0.0))


@pytest.mark.unit
class TestSynthOnDisk:
    def test_generate_is_byte_identical(self, tmp_path, small_synth_config):
        synth_generate(small_synth_config, tmp_path / "a")
        synth_generate(small_synth_config, tmp_path / "b")
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_loaded_dataset_matches_in_memory(self, synth_corpus, small_synth_config):
        dataset = load_dataset(synth_corpus, time_samples=8, seed=2)
        entries, matrices = synth_tracks(small_synth_config)
        expected = TrackDataset.from_matrices(entries, matrices, time_samples=8, seed=2)
        assert dataset.track_ids == expected.track_ids
        for a, b in zip(dataset.matrices, expected.matrices):
            np.testing.assert_array_equal(a, b)

    def test_threaded_load_matches_serial(self, synth_corpus):
        a = load_dataset(synth_corpus, time_samples=8, seed=2, threads=1)
        b = load_dataset(synth_corpus, time_samples=8, seed=2, threads=4)
        for x, y in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(x, y)

    def test_session_filter(self, synth_corpus):
        dataset = load_dataset(synth_corpus, time_samples=8, sessions=["s1"])
        assert {e.session for e in dataset.entries} == {"s1"}

    def test_manifest_name(self, synth_corpus):
        assert synth_corpus.name == MANIFEST_NAME


@pytest.mark.unit
class TestTrackDataset:
    def test_corrupted_mask_follows_sampled_frames(self, small_synth_config):
        entries, matrices = synth_tracks(small_synth_config)
        dataset = TrackDataset.from_matrices(entries, matrices, time_samples=8, seed=0)
        for i, e in enumerate(dataset.entries):
            mask = dataset.corrupted_mask(e.track_id)
            expected = [int(s) in set(e.corrupted_frames) for s in dataset.source_indices[i]]
            assert list(mask) == expected

    def test_unknown_track(self, small_synth_config):
        entries, matrices = synth_tracks(small_synth_config)
        dataset = TrackDataset.from_matrices(entries, matrices, time_samples=8)
        with pytest.raises(UnknownTrackError):
            dataset.matrix("nope")
