import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rnml_eta.datagen import generate_network, generate_trips
from rnml_eta.trainer import EtaDataset

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_catalog():
    return generate_network(60, seed=11)


@pytest.fixture(scope="session")
def small_trips(small_catalog):
    return generate_trips(small_catalog, 400, drivers=12, seed=5)


@pytest.fixture(scope="session")
def small_data(small_catalog, small_trips):
    return EtaDataset.from_trips(small_catalog, small_trips)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.REPORT.values():
        terminalreporter.write_line(line)
