"""
Smoke tests for CI/CD pipeline
Quick checks that every package imports and one track embeds
"""
import numpy as np
import pytest


@pytest.mark.unit
class TestBasicFunctionality:
    """Basic smoke tests for core functionality"""

    def test_packages_import(self):
        import cli.main  # noqa: F401
        import dataio.checkpoint  # noqa: F401
        import reid.experiments  # noqa: F401
        import shared.db  # noqa: F401

    def test_config_defaults(self):
        from shared.config import CONFIG

        assert CONFIG.threads >= 1
        assert CONFIG.embedding_db_name.endswith(".db")

    def test_embed_one_track(self):
        from reid.aggregation import AggregatorVariant
        from reid.metrics import MetricKind
        from reid.model import Model
        from reid.training import init_params

        agg, metric = init_params(0, 6, 4, MetricKind.EUCLIDEAN, AggregatorVariant.FULL)
        embedding = Model(agg, metric).embed([np.random.default_rng(0).normal(size=(5, 6))])[0]
        assert embedding.vector.shape == (4,)
        assert np.linalg.norm(embedding.vector) == pytest.approx(1.0)

    def test_help_exits_cleanly(self, capsys):
        from cli.main import main

        assert main(["--help"]) == 0
        assert "synth" in capsys.readouterr().out
