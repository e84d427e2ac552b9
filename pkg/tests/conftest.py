import numpy as np
import pytest

from dmaisac.channel import build_propagation_matrix
from dmaisac.design import LorentzianWeights, run_design
from dmaisac.fisher import build_lifted
from dmaisac.scenario import reduced_scenario


@pytest.fixture(scope="session")
def reduced():
    return reduced_scenario()


@pytest.fixture(scope="session")
def reduced_P(reduced):
    return build_propagation_matrix(reduced.panel)


@pytest.fixture(scope="session")
def reduced_lifted(reduced, reduced_P):
    return build_lifted(reduced, reduced_P)


@pytest.fixture(scope="session")
def reduced_designs(reduced, reduced_P, reduced_lifted):
    """P1, P2 and CFS on the reduced instance at its default 20 dB threshold (solved once)."""
    return {m: run_design(m, reduced, reduced_P, reduced_lifted) for m in ("P1", "P2", "CFS")}


def random_weights(n_rf, n_e, seed=0):
    rng = np.random.default_rng(seed)
    return LorentzianWeights(rng.uniform(-np.pi, np.pi, (n_rf, n_e)))


ACCEPTANCE_LINES = {}


def record_acceptance(number, name, passed, detail=""):
    """Store one PASS/FAIL line for the end-of-run acceptance summary."""
    line = f"{'PASS' if passed else 'FAIL'}  [{number:2d}] {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
