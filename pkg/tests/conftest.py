import numpy as np
import pytest

from bnpspatial.data import Dataset
from bnpspatial.graph import adjacency, grid_graph


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid3():
    return grid_graph(3, 3)


@pytest.fixture
def grid4():
    return grid_graph(4, 4)


@pytest.fixture
def adj4(grid4):
    return adjacency(grid4)


def make_mixed_dataset(rng, n=12, q=1, count=True, binomial=True, continuous=True):
    x = rng.uniform(-1.5, 1.5, (n, 1))
    w = rng.normal(3.0, 1.0, (n, q))
    kw = {}
    if count:
        E = rng.uniform(5.0, 10.0, n)
        kw.update(y1=rng.poisson(E * np.exp(0.3 * x[:, 0])), E=E)
    if binomial:
        N = rng.integers(1, 8, n)
        kw.update(y2=rng.binomial(N, 0.4), N=N)
    if continuous:
        kw.update(y3=0.5 * x[:, 0] + rng.standard_normal(n))
    return Dataset(**kw, w=w, x=x)


@pytest.fixture
def mixed_data(rng):
    return make_mixed_dataset(rng)


@pytest.fixture
def count_data(rng):
    return make_mixed_dataset(rng, n=16, binomial=False, continuous=False)



# Acceptance outcomes, filled by tests/test_acceptance.py and printed once at
# the end of the session (one line per criterion).
def pytest_configure(config):
    config.acceptance_results = {}


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
