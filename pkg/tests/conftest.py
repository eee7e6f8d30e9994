import numpy as np
import pytest
from hypothesis import strategies as st

from mtbranch.model import (BranchingModel, OffspringLaw, binary_death_model, two_type_model, validate_model,
                            yule_model)
from mtbranch.spectral import spectral_data

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def m1():
    return yule_model()


@pytest.fixture(scope="session")
def m2():
    return two_type_model()


@pytest.fixture(scope="session")
def m3():
    return binary_death_model()


@pytest.fixture(scope="session")
def spec1(m1):
    return spectral_data(m1)


@pytest.fixture(scope="session")
def spec2(m2):
    return spectral_data(m2)


@pytest.fixture(scope="session")
def spec3(m3):
    return spectral_data(m3)


@st.composite
def random_models(draw, max_types=4, max_count=3):
    """Arbitrary finite-support models; callers filter on validity as needed."""
    n = draw(st.integers(1, max_types))
    laws = []
    for _ in range(n):
        k = draw(st.integers(1, 3))
        counts = draw(st.lists(st.tuples(*[st.integers(0, max_count)] * n), min_size=k, max_size=k, unique=True))
        weights = draw(st.lists(st.integers(1, 20), min_size=k, max_size=k))
        probs = np.array(weights, dtype=float) / sum(weights)
        laws.append(OffspringLaw(np.array(counts), probs))
    rates = draw(st.lists(st.floats(0.2, 3.0), min_size=n, max_size=n))
    return BranchingModel(np.array(rates), tuple(laws))


@st.composite
def valid_models(draw, max_types=4):
    model = draw(random_models(max_types))
    from hypothesis import assume
    assume(validate_model(model).ok)
    return model


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
