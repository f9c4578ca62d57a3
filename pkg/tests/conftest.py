import sys

import numpy as np
import pytest

from divshare.core import validate_config


def small_config(**changes):
    """Fast quadratic configuration used across the suite."""
    raw = dict(n=4, omega=0.5, j_fanout=2, eta=0.01, batch_size=5, rounds=5,
               dataset={"kind": "quadratic", "m": 5, "d": 8}, snapshot_interval=1.0, fast_bandwidth=1e5)
    raw.update(changes)
    return validate_config(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.LINES):
        terminalreporter.write_line(acceptance.LINES[number])
