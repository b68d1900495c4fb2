import numpy as np
import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """``report(n, passed, detail)``: print a PASS/FAIL line for criterion ``n`` and assert it."""

    def _report(n, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
        print("\n" + line)
        _ACCEPTANCE_LINES.append((n, line))
        assert passed, detail

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
