"""Fixtures shared across test areas."""
import pytest

from dataio.synth import MANIFEST_NAME, SynthConfig, synth_generate


@pytest.fixture
def small_synth_config():
    return SynthConfig(
        identities=6,
        tracks_per_identity=3,
        frames=12,
        dim=8,
        noise=0.05,
        corruption=0.2,
        distractors=4,
        sessions=2,
        seed=7,
    )


@pytest.fixture
def synth_corpus(tmp_path, small_synth_config):
    """A small synthetic corpus on disk; returns the manifest path."""
    out = tmp_path / "corpus"
    synth_generate(small_synth_config, out)
    return out / MANIFEST_NAME
