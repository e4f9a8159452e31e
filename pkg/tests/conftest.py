import numpy as np
import pytest

from chexhier.hierarchy import LabelHierarchy, default_hierarchy, load_hierarchy

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def chexpert():
    return default_hierarchy()


@pytest.fixture(scope="session")
def tree_abcd():
    """A -> B -> {C, D}."""
    return load_hierarchy("A\nB <- A\nC <- B\nD <- B\n")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] AC{number:02d} {title}: {detail}")
