import numpy as np
import pytest

from cstrlab.synth import DEFAULT_LEXICON, build_dataset, load_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A 48/16 split over 8 short words, shared by the training tests."""
    root = tmp_path_factory.mktemp("smallds")
    manifest = build_dataset(DEFAULT_LEXICON[:8], 48, 16, root, seed=7)
    return load_dataset(manifest)
