import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """``record(n, title, passed, detail)`` prints one line and fails the test when not passed."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_ticks():
    from lobmm.synthetic import synthetic_day

    return synthetic_day(900, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_ticks):
    from lobmm.pipeline import replay_to_snapshots

    return replay_to_snapshots(small_ticks)


@pytest.fixture(scope="session")
def small_day(small_dataset):
    from lobmm.pipeline import fit_day, normalize_day

    return normalize_day(small_dataset, fit_day(small_dataset))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
