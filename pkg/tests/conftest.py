import numpy as np
import pytest

from twoscale.model import model_from_config, preset_model, preset_params

# acceptance lines collected by test_acceptance and echoed in the summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def switch():
    return preset_model()


@pytest.fixture(scope="session")
def params():
    return preset_params()


@pytest.fixture(scope="session")
def three_state():
    """d=1, D=3 with a rotating (non-reversible) switch cycle."""
    return model_from_config({
        "name": "cycle3",
        "d": 1,
        "D": 3,
        "stoichiometry": [[1], [-1]],
        "propensities": ["0.5 + 2.0*gate(1) + 4.0*gate(2)", "z1"],
        "switch_rates": [[None, "2.0", "0.5"], ["0.5", None, "2.0"], ["2.0", "0.5 + hill(z1, 1, 2)", None]],
    })


@pytest.fixture(scope="session")
def birth_death():
    """Single-state immigration-death chain: rates a and z."""
    return model_from_config({"d": 1, "D": 1, "stoichiometry": [[1], [-1]],
                              "propensities": ["1.0", "z1"]})


@pytest.fixture(scope="session")
def switched_birth_death():
    return model_from_config({
        "d": 1, "D": 2, "stoichiometry": [[1], [-1]],
        "propensities": ["0.2 + 2.0*gate(1)", "z1"],
        "switch_rates": [[None, "1.0"], ["1.0 + z1", None]],
    })


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
