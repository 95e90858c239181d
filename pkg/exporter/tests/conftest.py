"""Shared fixtures: seeded model bundles and a saved artifact on disk."""

import numpy as np
import pytest

pytest.importorskip(
    "serexport", reason="install the exporter: pip install -e exporter/")

from serexport.model import DEFAULT_LABELS, init_bundle, save_bundle

SMALL_LABELS = ("angry", "sad", "happy")
SMALL_H, SMALL_W = 16, 20


@pytest.fixture(scope="session")
def small_bundle():
    """A 3-label model over 16x20 inputs; cheap enough for tight loops."""
    return init_bundle(SMALL_LABELS, SMALL_H, SMALL_W, seed=5)


@pytest.fixture(scope="session")
def full_bundle():
    return init_bundle(DEFAULT_LABELS, 128, 132, seed=3)


@pytest.fixture(scope="session")
def model_path(full_bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("artifact") / "model.pt"
    save_bundle(full_bundle, path)
    return path


@pytest.fixture(scope="session")
def small_model_path(small_bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("artifact-small") / "model.pt"
    save_bundle(small_bundle, path)
    return path


@pytest.fixture
def small_matrix():
    rng = np.random.default_rng(1)
    return rng.normal(size=(SMALL_H, SMALL_W))
