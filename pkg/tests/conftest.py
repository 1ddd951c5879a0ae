import time

import numpy as np
import pytest
from hypothesis import settings

from amcsim.matrix import eigenvalues

SUITE_LIMIT_S = 120.0

# fixed example generation keeps the whole suite deterministic
settings.register_profile("deterministic", derandomize=True, deadline=None)
settings.load_profile("deterministic")
_results = []
_start = {}


def pytest_sessionstart(session):
    _start["t"] = time.perf_counter()


def record_criterion(number, description, passed, detail=""):
    _results.append((number, description, bool(passed), detail))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    elapsed = time.perf_counter() - _start.get("t", time.perf_counter())
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, desc, passed, detail in sorted(_results, key=lambda r: r[0]):
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {desc} {detail}".rstrip())
    ok = elapsed < SUITE_LIMIT_S
    tr.write_line(f"[{'PASS' if ok else 'FAIL'}] suite wall time {elapsed:.1f} s (limit {SUITE_LIMIT_S:.0f} s)")


def pd_dominant(rng, n):
    """Symmetric, nonnegative, strictly diagonally dominant (hence PD) matrix."""
    b = rng.uniform(0.0, 1.0, (n, n))
    b = (b + b.T) / 2
    np.fill_diagonal(b, 0.0)
    return b + np.diag(b.sum(axis=1) + rng.uniform(0.1, 1.0, n))


def gapped_symmetric(rng, n, gap=0.2):
    """Nonnegative symmetric matrix whose top eigenvalue leads the next by ``gap``."""
    while True:
        b = rng.uniform(0.0, 1.0, (n, n))
        a = (b + b.T) / 2
        w = np.sort(eigenvalues(a).values.real)
        if (w[-1] - w[-2]) / w[-1] >= gap:
            return a, w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
