from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import complete, const_mf, random_graph, random_mf, rel_err, tied_fd
from ergm_bilevel.graph_stats import (
    ConfigError,
    Graph,
    MeanField,
    ModelSpec,
    Theta,
    change_stats,
    count_triangles_bruteforce,
    potential,
    read_graph,
    scaled_potential_Tn,
    stat_edges,
    stat_triangles,
    stat_two_stars,
    stats_gradient_mu,
    stats_vector,
    write_adjacency_csv,
    write_edgelist_csv,
)

ALL = ("edges", "two_stars", "triangles")


def two_stars_loop(a):
    n = a.shape[0]
    return sum(a[i, j] * a[i, k] for i in range(n) for j, k in combinations(range(n), 2)) / n


def triangles_loop(a):
    n = a.shape[0]
    return sum(a[i, j] * a[j, k] * a[k, i] for i in range(n) for j in range(n) for k in range(n)) / (6 * n)


def test_edges_examples():
    assert stat_edges(Graph.empty(5)) == 0
    assert stat_edges(Graph.from_edges(3, [(0, 1)])) == 2
    assert stat_edges(complete(4)) == 12


def test_two_star_examples():
    assert stat_two_stars(Graph.empty(4)) == 0
    assert stat_two_stars(Graph.from_edges(3, [(0, 1), (1, 2)])) == pytest.approx(1 / 3)
    assert stat_two_stars(Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])) == pytest.approx(3 / 4)


def test_triangle_examples():
    assert stat_triangles(Graph.empty(4)) == 0
    assert stat_triangles(complete(3)) == pytest.approx(1 / 3)
    assert stat_triangles(complete(4)) == pytest.approx(1.0)


def test_stats_vector_examples():
    np.testing.assert_allclose(stats_vector(complete(3), ("edges", "triangles")), [6, 1 / 3])
    np.testing.assert_array_equal(stats_vector(Graph.empty(5), ALL), 0.0)
    assert stats_vector(const_mf(3, 0.5), ("edges",))[0] == pytest.approx(3.0)


def test_potential_examples():
    assert potential([-1, 1], complete(3)) == pytest.approx(-6 + 1 / 3)
    assert potential([0, 0], complete(3)) == 0
    assert potential([-1, 1], Graph.empty(3)) == 0
    assert scaled_potential_Tn([-1, 1], complete(3)) == pytest.approx((-6 + 1 / 3) / 9)
    assert scaled_potential_Tn([0, 0], complete(5)) == 0


def test_covariate_statistic():
    z = np.array([[0, 1, 2], [1, 0, 3], [2, 3, 0]], dtype=float)
    spec = ModelSpec(("edges", "dyadic_covariate"), z)
    g = Graph.from_edges(3, [(0, 2), (1, 2)])
    np.testing.assert_allclose(stats_vector(g, spec), [4, 2 * (2 + 3)])


def test_statistics_match_loops(rng):
    for _ in range(10):
        g = random_graph(7, 0.4, rng)
        assert stat_two_stars(g) == pytest.approx(two_stars_loop(g.adj))
        assert stat_triangles(g) == pytest.approx(triangles_loop(g.adj))
        assert stat_triangles(g) * g.n == pytest.approx(count_triangles_bruteforce(g))
        mu = random_mf(6, rng)
        assert stat_two_stars(mu) == pytest.approx(two_stars_loop(mu.mu))
        assert stat_triangles(mu) == pytest.approx(triangles_loop(mu.mu))


def test_gradient_examples():
    g = stats_gradient_mu(const_mf(3, 0.5), ("edges", "triangles"))
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(g[0][off], 2.0)
    np.testing.assert_allclose(g[1][off], 1 / 12)
    assert np.all(np.diag(g[1]) == 0)


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7, 8])
def test_gradient_matches_finite_differences(n, rng):
    z = rng.random((n, n))
    spec = ModelSpec(ALL + ("dyadic_covariate",), z + z.T)
    for _ in range(4):
        mu = random_mf(n, rng).mu * 0.8 + 0.1
        grads = stats_gradient_mu(mu, spec)
        for s in range(spec.dim):
            fd = tied_fd(lambda m: stats_vector(m, spec)[s], mu)
            assert rel_err(grads[s], fd) < 1e-6


def test_change_stats_match_recount(rng):
    for n in (3, 4, 5, 6):
        for _ in range(5):
            g = random_graph(n, 0.5, rng)
            for i, j in combinations(range(n), 2):
                plus, minus = g.adj.copy(), g.adj.copy()
                plus[i, j] = plus[j, i] = 1
                minus[i, j] = minus[j, i] = 0
                expected = stats_vector(plus, ALL) - stats_vector(minus, ALL)
                np.testing.assert_allclose(change_stats(g, i, j, ALL), expected, atol=1e-12)


def test_invalid_inputs():
    with pytest.raises(ConfigError):
        ModelSpec(("edges", "stars"))
    with pytest.raises(ConfigError):
        Theta([1.0], ("edges", "triangles"))
    with pytest.raises(ConfigError):
        Theta([np.nan, 1.0])
    with pytest.raises(ConfigError):
        Graph(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ConfigError):
        Graph(np.array([[1, 0], [0, 0]]))
    with pytest.raises(ConfigError):
        MeanField(np.array([[0, 1.0], [1.0, 0]]))


def test_graph_io_round_trip(tmp_path, rng):
    g = random_graph(9, 0.3, rng)
    write_edgelist_csv(g, tmp_path / "g.csv")
    write_adjacency_csv(g, tmp_path / "a.csv")
    assert read_graph(tmp_path / "g.csv") == g
    assert read_graph(tmp_path / "a.csv") == g
    iso = Graph.empty(4)
    write_edgelist_csv(iso, tmp_path / "e.csv")
    assert read_graph(tmp_path / "e.csv").n == 4


adjacency = st.integers(3, 8).flatmap(
    lambda n: arrays(np.int8, (n, n), elements=st.integers(0, 1)))


def _sym(a):
    u = np.triu(a, 1)
    return Graph(u + u.T)


@settings(max_examples=60, deadline=None)
@given(adjacency, st.randoms(use_true_random=False))
def test_relabeling_invariance(a, rnd):
    g = _sym(a)
    perm = list(range(g.n))
    rnd.shuffle(perm)
    h = Graph(g.adj[np.ix_(perm, perm)])
    np.testing.assert_allclose(stats_vector(g, ALL), stats_vector(h, ALL), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(adjacency, st.data())
def test_adding_an_edge_never_decreases_statistics(a, data):
    g = _sym(a)
    i, j = data.draw(st.lists(st.integers(0, g.n - 1), min_size=2, max_size=2, unique=True))
    b = g.adj.copy()
    b[i, j] = b[j, i] = 1
    assert np.all(stats_vector(b, ALL) >= stats_vector(g, ALL) - 1e-12)
    assert np.all(stats_vector(g, ALL) >= 0)
