import numpy as np
import pytest
from scipy import sparse

from bnf.affinity import AffinityGraph

# Acceptance results collected by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE_LINES = []


def random_graph(rng, n, density=0.1, wmax=3.0):
    """Random symmetric sparse graph; a ring keeps every degree positive."""
    mask = sparse.random(n, n, density=density, random_state=rng, format="coo")
    i, j = mask.row, mask.col
    keep = i < j
    i, j = i[keep], j[keep]
    ring = np.arange(n)
    i = np.concatenate([i, ring])
    j = np.concatenate([j, (ring + 1) % n])
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    ok = lo != hi
    key = np.unique(lo[ok] * n + hi[ok])
    lo, hi = key // n, key % n
    w = rng.uniform(0.05, wmax, size=len(lo))
    return AffinityGraph.from_edges(n, lo, hi, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
