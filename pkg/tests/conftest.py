import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gwinf import meanmatrix  # noqa: E402
from gwinf.model import build_model, load_spec  # noqa: E402


def _prepared(name):
    model = build_model(load_spec(name))
    M = meanmatrix.build_truncated(model)
    return model, M, meanmatrix.eigen_pair(M)


@pytest.fixture(scope="session")
def chain1():
    return _prepared("chain_alpha1")


@pytest.fixture(scope="session")
def chain05():
    return _prepared("chain_alpha05")


@pytest.fixture(scope="session")
def kolmogorov():
    return _prepared("single_kolmogorov")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
