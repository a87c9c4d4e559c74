import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from nonlocal_lab import (DiffusionTensor, KernelSpec, OrderField,  # noqa: E402
                          build_interval_mesh)


@pytest.fixture(scope="session")
def spec_const():
    return KernelSpec(OrderField.constant(0.4), DiffusionTensor.identity(1), 0.25)


@pytest.fixture(scope="session")
def spec_var():
    return KernelSpec(OrderField.sine(0.45, 0.15), DiffusionTensor.identity(1), 0.25)


@pytest.fixture(scope="session")
def mesh8():
    return build_interval_mesh(0.0, 1.0, 8, 0.25)


@pytest.fixture(scope="session")
def mesh16():
    return build_interval_mesh(0.0, 1.0, 16, 0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
