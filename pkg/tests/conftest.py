import pytest

from isdnn_lab.airsim import DatasetConfig, gen_dataset
from isdnn_lab.rng import SeededRng

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return SeededRng(1234, 7)


def crandn(rng, shape, var=1.0):
    return rng.complex_gaussian(shape, var)


@pytest.fixture(scope="session")
def small_rayleigh():
    return gen_dataset(DatasetConfig(nt=2, nr=8, n_pilots=2, count=600, seed=11))


@pytest.fixture(scope="session")
def small_structured():
    return gen_dataset(DatasetConfig(nt=2, nr=8, n_pilots=2, count=600, seed=12, structured=True))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
