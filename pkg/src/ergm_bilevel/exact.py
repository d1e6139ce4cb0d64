"""Brute-force enumeration of all graphs on n <= 6 nodes.

Graph k of the enumeration has pair p (upper triangle, row-major) present
iff bit p of k is set, so graph 0 is empty and graph 2**P - 1 is complete.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .graph_stats import ConfigError, _mat, _theta_and_spec, as_spec, scaled_potential_Tn

MAX_N = 6


def _check_n(n: int) -> None:
    if not 1 <= n <= MAX_N:
        raise ConfigError(f"exact enumeration supports 1 <= n <= {MAX_N}, got n={n}")


@lru_cache(maxsize=None)
def _bits(n: int) -> np.ndarray:
    P = n * (n - 1) // 2
    k = np.arange(1 << P, dtype=np.int64)
    return ((k[:, None] >> np.arange(P)) & 1).astype(np.float64)


def all_graph_stats(n: int, spec=None) -> np.ndarray:
    """Statistics of every graph on n nodes in enumeration order, shape (2**P, d)."""
    _check_n(n)
    spec = as_spec(spec)
    bits = _bits(n)
    N = bits.shape[0]
    iu = np.triu_indices(n, 1)
    A = np.zeros((N, n, n))
    A[:, iu[0], iu[1]] = bits
    A = A + A.transpose(0, 2, 1)
    out = np.empty((N, spec.dim))
    for s, kind in enumerate(spec.kinds):
        if kind == "edges":
            out[:, s] = A.sum(axis=(1, 2))
        elif kind == "two_stars":
            r = A.sum(axis=2)
            out[:, s] = (r * (r - 1) / 2).sum(axis=1) / n
        elif kind == "triangles":
            out[:, s] = np.einsum("gij,gjk,gki->g", A, A, A) / (6 * n)
        else:
            out[:, s] = (A * spec.covariate).sum(axis=(1, 2))
    return out


@dataclass
class ExactModel:
    """Probability table of the ERGM over every graph on n nodes."""

    n: int
    spec: object
    theta: np.ndarray
    stats: np.ndarray
    log_q: np.ndarray
    log_z: float

    @classmethod
    def build(cls, theta, n: int, spec=None) -> "ExactModel":
        _check_n(n)
        values, spec = _theta_and_spec(theta, spec)
        stats = all_graph_stats(n, spec)
        log_q = stats @ values
        return cls(n, spec, values, stats, log_q, float(logsumexp(log_q)))

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_q - self.log_z)

    @property
    def psi(self) -> float:
        return self.log_z / self.n**2

    def mean_stats(self) -> np.ndarray:
        return self.probabilities @ self.stats

    def cov_stats(self) -> np.ndarray:
        p = self.probabilities
        c = self.stats - p @ self.stats
        return (c * p[:, None]).T @ c


def exact_psi(theta, n: int, spec=None) -> float:
    """n^-2 log sum_w exp(Q(theta | w))."""
    return ExactModel.build(theta, n, spec).psi


def exact_mean_stats(theta, n: int, spec=None) -> np.ndarray:
    return ExactModel.build(theta, n, spec).mean_stats()


def exact_loglik(theta, g, spec=None) -> float:
    """Scaled log-likelihood T_n(theta | g) - psi_n(theta)."""
    values, spec = _theta_and_spec(theta, spec)
    n = _mat(g).shape[0]
    return scaled_potential_Tn(values, g, spec) - exact_psi(values, n, spec)
