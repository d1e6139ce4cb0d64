import numpy as np
import pytest

from ergm_bilevel.graph_stats import Graph, MeanField
from ergm_bilevel.meanfield import random_meanfield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def complete(n):
    return Graph(np.ones((n, n), dtype=int) - np.eye(n, dtype=int))


def random_graph(n, p, rng):
    a = np.triu((rng.random((n, n)) < p).astype(int), 1)
    return Graph(a + a.T)


def random_mf(n, rng, zeta=1e-6):
    return random_meanfield(n, rng, zeta)


def const_mf(n, value, zeta=1e-6):
    m = np.full((n, n), value)
    np.fill_diagonal(m, 0.0)
    return MeanField(m, min(zeta, value))


def tied_fd(fun, m, h=1e-6):
    """Central differences of fun with respect to each unordered pair (i, j)."""
    n = m.shape[0]
    g = np.zeros_like(m)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros_like(m)
            e[i, j] = e[j, i] = h
            g[i, j] = g[j, i] = (fun(m + e) - fun(m - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
