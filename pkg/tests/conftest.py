import pytest

from fakemart.laws import get_law
from fakemart.mixture import validate_spec
from fakemart.timechange import make_timechange

# One line per acceptance criterion, filled by test_acceptance.py.
ACCEPTANCE_LINES = []


def make_spec(law_name, K, c):
    law = get_law(law_name)
    return validate_spec(law, make_timechange(law, K), c)


@pytest.fixture(scope="session")
def ebm_spec():
    return make_spec("ebm", 0.5, 0.25)


@pytest.fixture(scope="session")
def bm_spec():
    return make_spec("bm", 0.5, 0.25)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
