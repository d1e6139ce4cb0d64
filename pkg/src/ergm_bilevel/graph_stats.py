"""Graphs, mean-field matrices and ERGM sufficient statistics.

All statistics carry their scaling so that the potential is a plain dot
product ``Q(theta | m) = theta @ stats_vector(m, spec)``:

* ``edges``            sum over ordered pairs, each undirected edge counted twice
* ``two_stars``        (1/n) * sum_i sum_{j<k} m_ij m_ik
* ``triangles``        (1/(6n)) * sum_{i,j,k} m_ij m_jk m_ki
* ``dyadic_covariate`` sum_{i,j} z_ij m_ij for a user supplied symmetric z

Gradients with respect to a mean-field matrix use the tied convention: the
pair (i, j) is one variable shared by ``mu[i, j]`` and ``mu[j, i]``; results
are returned as full symmetric matrices with zero diagonal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

KINDS = ("edges", "two_stars", "triangles", "dyadic_covariate")

EDGE_TRIANGLE = ("edges", "triangles")


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during an optimisation run.

    ``trace`` carries whatever partial trace the caller had recorded.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ModelSpec:
    """Ordered list of statistic kinds, plus the covariate matrix if used."""

    kinds: tuple[str, ...] = EDGE_TRIANGLE
    covariate: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        kinds = tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        if not kinds:
            raise ConfigError("model spec must contain at least one statistic")
        for k in kinds:
            if k not in KINDS:
                raise ConfigError(f"unknown statistic kind {k!r}; expected one of {KINDS}")
        if "dyadic_covariate" in kinds:
            if self.covariate is None:
                raise ConfigError("dyadic_covariate requires a covariate matrix")
            z = np.asarray(self.covariate, dtype=float)
            if z.ndim != 2 or z.shape[0] != z.shape[1] or not np.allclose(z, z.T):
                raise ConfigError("covariate matrix must be square and symmetric")
            object.__setattr__(self, "covariate", z)

    @property
    def dim(self) -> int:
        return len(self.kinds)

    @classmethod
    def parse(cls, text: str | Sequence[str], covariate=None) -> "ModelSpec":
        if isinstance(text, str):
            text = [t.strip() for t in text.split(",") if t.strip()]
        return cls(tuple(text), covariate)


def as_spec(spec) -> ModelSpec:
    if isinstance(spec, ModelSpec):
        return spec
    if spec is None:
        return ModelSpec()
    return ModelSpec.parse(spec)


@dataclass(frozen=True)
class Theta:
    values: np.ndarray
    spec: ModelSpec = ModelSpec()

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "spec", as_spec(self.spec))
        if v.shape[0] != self.spec.dim:
            raise ConfigError(f"theta has {v.shape[0]} values but spec has {self.spec.dim} statistics")
        if not np.all(np.isfinite(v)):
            raise ConfigError("theta values must be finite")


class Graph:
    """Undirected simple graph stored as a dense 0/1 adjacency matrix."""

    def __init__(self, adj):
        a = np.asarray(adj)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError("adjacency matrix must be square")
        if not np.all((a == 0) | (a == 1)):
            raise ConfigError("adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise ConfigError("adjacency matrix must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ConfigError("adjacency matrix must have a zero diagonal")
        self.adj = a.astype(np.float64)
        self.adj.setflags(write=False)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.adj

    def n_edges(self) -> int:
        return int(self.adj.sum() // 2)

    def density(self) -> float:
        n = self.n
        return self.n_edges() / (n * (n - 1) / 2) if n > 1 else 0.0

    def edge_list(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adj, 1))
        return list(zip(i.tolist(), j.tolist()))

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(np.zeros((n, n)))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(np.ones((n, n)) - np.eye(n))

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        a = np.zeros((n, n))
        for i, j in edges:
            if i == j:
                raise ConfigError(f"self loop at node {i}")
            a[i, j] = a[j, i] = 1
        return cls(a)

    def __eq__(self, other):
        return isinstance(other, Graph) and np.array_equal(self.adj, other.adj)

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.n_edges()})"


class MeanField:
    """Symmetric link-probability matrix with entries in [zeta, 1 - zeta]."""

    def __init__(self, mu, zeta: float = 1e-6, check: bool = True):
        m = np.array(mu, dtype=np.float64)
        if not 0.0 < zeta < 0.5:
            raise ConfigError("zeta must lie in (0, 0.5)")
        if check:
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ConfigError("mean-field matrix must be square")
            if not np.allclose(m, m.T, rtol=0, atol=1e-12):
                raise ConfigError("mean-field matrix must be symmetric")
            if np.any(np.diag(m) != 0):
                raise ConfigError("mean-field matrix must have a zero diagonal")
            off = m[~np.eye(m.shape[0], dtype=bool)]
            if off.size and (off.min() < zeta - 1e-15 or off.max() > 1 - zeta + 1e-15):
                raise ConfigError("mean-field entries must lie in [zeta, 1 - zeta]")
        self.mu = m
        self.zeta = zeta

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.mu

    @classmethod
    def constant(cls, n: int, value: float, zeta: float = 1e-6) -> "MeanField":
        return cls(value * (np.ones((n, n)) - np.eye(n)), zeta)

    def __repr__(self):
        return f"MeanField(n={self.n}, zeta={self.zeta:g})"


def _mat(m) -> np.ndarray:
    if isinstance(m, (Graph, MeanField)):
        return m.matrix
    return np.asarray(m, dtype=np.float64)


def stat_edges(m) -> float:
    return float(_mat(m).sum())


def stat_two_stars(m, n: int | None = None) -> float:
    a = _mat(m)
    n = a.shape[0] if n is None else n
    r = a.sum(axis=1)
    # sum_{j<k} a_ij a_ik = (r_i^2 - sum_j a_ij^2) / 2
    return float(((r * r - (a * a).sum(axis=1)) / 2).sum() / n)


def stat_triangles(m, n: int | None = None) -> float:
    a = _mat(m)
    n = a.shape[0] if n is None else n
    return float(np.einsum("ij,ji->", a @ a, a) / (6 * n))


def stat_covariate(m, z) -> float:
    return float((_mat(m) * z).sum())


def stats_vector(m, spec=None) -> np.ndarray:
    spec = as_spec(spec)
    a = _mat(m)
    n = a.shape[0]
    out = np.empty(spec.dim)
    a2 = None
    for s, kind in enumerate(spec.kinds):
        if kind == "edges":
            out[s] = a.sum()
        elif kind == "two_stars":
            out[s] = stat_two_stars(a, n)
        elif kind == "triangles":
            if a2 is None:
                a2 = a @ a
            out[s] = np.einsum("ij,ji->", a2, a) / (6 * n)
        else:
            out[s] = stat_covariate(a, spec.covariate)
    return out


def potential(theta, m, spec=None) -> float:
    """Q(theta | m) = <theta, T(m)>."""
    values, spec = _theta_and_spec(theta, spec)
    return float(values @ stats_vector(m, spec))


def scaled_potential_Tn(theta, m, spec=None) -> float:
    n = _mat(m).shape[0]
    return potential(theta, m, spec) / n**2


def _theta_and_spec(theta, spec):
    if isinstance(theta, Theta):
        if spec is not None and as_spec(spec).kinds != theta.spec.kinds:
            raise ConfigError("theta spec does not match the requested spec")
        return theta.values, theta.spec
    spec = as_spec(spec)
    values = np.asarray(theta, dtype=float).reshape(-1)
    if values.shape[0] != spec.dim:
        raise ConfigError(f"theta has {values.shape[0]} values but spec has {spec.dim} statistics")
    return values, spec


def stats_gradient_mu(m, spec=None) -> list[np.ndarray]:
    """Tied derivative dS/dmu_ij of each statistic, one n x n matrix per statistic."""
    spec = as_spec(spec)
    a = _mat(m)
    n = a.shape[0]
    off = 1.0 - np.eye(n)
    grads = []
    for kind in spec.kinds:
        if kind == "edges":
            g = 2.0 * off
        elif kind == "two_stars":
            r = a.sum(axis=1)
            g = (r[:, None] + r[None, :] - 2.0 * a) / n * off
        elif kind == "triangles":
            g = (a @ a) / n * off
        else:
            g = 2.0 * spec.covariate * off
        grads.append(g)
    return grads


def weighted_stats_gradient(theta_values, m, spec) -> np.ndarray:
    """sum_s theta_s * dS_s/dmu (tied), computed without building every matrix twice."""
    spec = as_spec(spec)
    a = _mat(m)
    n = a.shape[0]
    g = np.zeros_like(a)
    for th, kind in zip(theta_values, spec.kinds):
        if kind == "edges":
            g += 2.0 * th
        elif kind == "two_stars":
            r = a.sum(axis=1)
            g += th * (r[:, None] + r[None, :] - 2.0 * a) / n
        elif kind == "triangles":
            g += th * (a @ a) / n
        else:
            g += 2.0 * th * spec.covariate
    np.fill_diagonal(g, 0.0)
    return g


def change_stats(m, i: int, j: int, spec=None) -> np.ndarray:
    """T(m with ij set to 1) - T(m with ij set to 0), from local counts only."""
    if i == j:
        raise ValueError("change statistics need two distinct nodes")
    spec = as_spec(spec)
    a = _mat(m)
    n = a.shape[0]
    out = np.empty(spec.dim)
    for s, kind in enumerate(spec.kinds):
        if kind == "edges":
            out[s] = 2.0
        elif kind == "two_stars":
            out[s] = (a[i].sum() + a[j].sum() - 2.0 * a[i, j]) / n
        elif kind == "triangles":
            out[s] = float(a[i] @ a[j]) / n
        else:
            out[s] = 2.0 * spec.covariate[i, j]
    return out


def count_triangles_bruteforce(adj) -> int:
    """Undirected triangle count by iterating i < j < k."""
    a = _mat(adj)
    n = a.shape[0]
    c = 0
    for i in range(n):
        for j in range(i + 1, n):
            if not a[i, j]:
                continue
            for k in range(j + 1, n):
                if a[j, k] and a[i, k]:
                    c += 1
    return c


# -- I/O ---------------------------------------------------------------------

def write_adjacency_csv(g: Graph, path) -> None:
    np.savetxt(path, g.adj.astype(int), fmt="%d", delimiter=",")


def read_adjacency_csv(path) -> Graph:
    a = np.loadtxt(path, delimiter=",", dtype=int, ndmin=2)
    return Graph(a)


def write_edgelist_csv(g: Graph, path) -> None:
    """Edge list with header ``i,j`` (0-based); the node count goes in a comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# n={g.n}\n")
        w = csv.writer(fh)
        w.writerow(["i", "j"])
        w.writerows(g.edge_list())


def read_edgelist_csv(path, n: int | None = None) -> Graph:
    edges = []
    header_n = None
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("n="):
                        header_n = int(tok[2:])
                continue
            lines.append(line)
    rows = list(csv.reader(lines))
    if not rows or [c.strip() for c in rows[0]] != ["i", "j"]:
        raise ConfigError(f"{path}: edge list must start with header 'i,j'")
    for r in rows[1:]:
        if r:
            edges.append((int(r[0]), int(r[1])))
    n = n if n is not None else header_n
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    return Graph.from_edges(n, edges)


def read_graph(path, n: int | None = None) -> Graph:
    """Read either an edge list (header ``i,j``) or an adjacency-matrix CSV."""
    path = Path(path)
    with open(path) as fh:
        head = ""
        for line in fh:
            if not line.startswith("#"):
                head = line.strip()
                break
    if head.replace(" ", "") == "i,j":
        return read_edgelist_csv(path, n)
    return read_adjacency_csv(path)
