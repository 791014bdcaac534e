import numpy as np
import pytest

from lfpcfuse import synth


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def street_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("street")
    synth.write_dataset(out, synth.street_scene(9, seed=1), channels=48, seed=1)
    return out
