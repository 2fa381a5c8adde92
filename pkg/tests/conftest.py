import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from folilab.models import make_model  # noqa: E402

ACCEPTANCE_LINES = []

_MODEL_CACHE = {}


def model(name, **params):
    key = (name, tuple(sorted(params.items())))
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = make_model(name, **params)
    return _MODEL_CACHE[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    """Record one acceptance line; the terminal summary prints them all."""

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
