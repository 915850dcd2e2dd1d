import numpy as np
import pytest

from fedgraph_fdia.grid import load_case, parse_case_text

TWO_BUS = """\
CASE two 2
BUS 1 10 2 0 0
BUS 2 20 4 0 0
BRANCH 1 2 1.0 -10.0
"""

TRIANGLE = """\
CASE tri 3
BUS 1 10 2 0 0
BUS 2 20 4 0 0
BUS 3 15 3 0 0
BRANCH 1 2 1.0 -10.0
BRANCH 2 3 2.0 -8.0
BRANCH 1 3 0.5 -5.0
"""

# three buses on a path with shunts at the ends; used by the flow-balance oracle
THREE_BUS = """\
CASE three 3
BUS 1 0 0 0.01 0.02
BUS 2 30 10 0 0
BUS 3 20 5 0 0.05
BRANCH 1 2 2.0 -12.0
BRANCH 2 3 1.5 -9.0
"""


@pytest.fixture(scope="session")
def two_bus():
    return parse_case_text(TWO_BUS)


@pytest.fixture(scope="session")
def triangle():
    return parse_case_text(TRIANGLE)


@pytest.fixture(scope="session")
def three_bus():
    return parse_case_text(THREE_BUS)


@pytest.fixture(scope="session")
def ieee57():
    return load_case("ieee57")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
