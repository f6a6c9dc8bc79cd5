import pytest

from roadsim import netmodel


@pytest.fixture(scope="session")
def grid3x3():
    return netmodel.generate_grid(3, 3, 100.0, 100.0, signalized=False)


@pytest.fixture(scope="session")
def grid4x3_signals():
    return netmodel.generate_grid(4, 3, 100.0, 100.0, signalized=True)


@pytest.fixture(scope="session")
def grid5x5_signals():
    return netmodel.generate_grid(5, 5, 100.0, 100.0, signalized=True)
