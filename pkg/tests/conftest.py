import numpy as np
import pytest

from elliptic_bayes.grid import build_grid
from elliptic_bayes.link import build_link


@pytest.fixture(scope="session")
def link():
    return build_link()


@pytest.fixture(scope="session")
def grid64():
    return build_grid(d=1, n=64)


@pytest.fixture(scope="session")
def grid256():
    return build_grid(d=1, n=256)


@pytest.fixture
def rng():
    return np.random.default_rng(20260)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion number -> (passed, detail); printed in the terminal summary."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} -- {detail}")
