import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def data_dir():
    return DATA


_CRITERIA = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def _report(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        _CRITERIA.append(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
