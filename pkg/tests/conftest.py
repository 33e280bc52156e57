import numpy as np
import pytest

from ordcl import datasets

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def wine():
    return datasets.wine(), datasets.wine_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def criterion():
    """Record one acceptance criterion: ``criterion(n, title, checks)``.

    ``checks`` maps a short description to a bool. The criterion passes when
    every check does; the outcome is printed immediately and again in the
    terminal summary, and the test fails on any failed check.
    """

    def record(n, title, checks):
        failed = [name for name, ok in checks.items() if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"criterion {n}: {status}  {title}"
        if failed:
            line += "  [failed: " + "; ".join(failed) + "]"
        _ACCEPTANCE[n] = line
        print(line)
        assert not failed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
