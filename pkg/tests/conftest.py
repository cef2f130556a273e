from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from retemp.config import TrainConfig
from retemp.data import generate_synthetic
from retemp.train import TemporalGraph

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line[1])


class _Criterion:
    """Records one acceptance line (PASS/FAIL/SKIP) and asserts on it."""

    def __init__(self, store):
        self.store = store

    def _line(self, number, status, title, detail):
        line = f"{status:<4}  criterion {number:>2}: {title}"
        if detail:
            line += f"  [{detail}]"
        self.store.append((number, line))
        print(line)
        return line

    def __call__(self, number: int, title: str, passed: bool, detail: str = "") -> None:
        line = self._line(number, "PASS" if passed else "FAIL", title, detail)
        assert passed, line

    def skip(self, number: int, title: str, reason: str) -> None:
        self._line(number, "SKIP", title, reason)
        pytest.skip(reason)


@pytest.fixture
def criterion(request):
    return _Criterion(request.config.stash[_ACCEPTANCE_KEY])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_graph():
    ds = generate_synthetic(3, 12, 3, 10, "uniform-random", facts_per_snapshot=8)
    return TemporalGraph.from_dataset(ds)


@pytest.fixture
def tiny_config():
    return TrainConfig(dim=8, history_length=2, layers=2, channels=4, dropout=0.0, epochs=3,
                       patience=2, seed=5)
