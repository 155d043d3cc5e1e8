import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from netfail import GaussianModel, preset, scale_instance


@pytest.fixture(scope="session")
def example1():
    return preset("example1")


@pytest.fixture(scope="session")
def example1_model(example1):
    return GaussianModel.from_spec(example1.spec)


@pytest.fixture(scope="session")
def example1_instance(example1):
    return scale_instance(example1.spec, 1.5, example1.k_rule)


@pytest.fixture()
def rng():
    return np.random.default_rng(20250809)
