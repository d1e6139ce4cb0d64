"""Regularised mean-field lower-level problem.

    Gamma_n(theta, mu) = T_n(theta | mu) - H_n(mu)
    f_eps(theta, mu)   = -Gamma_n(theta, mu) + eps / (2 n^2) * ||mu||_F^2

``mu`` is minimised over U_zeta (symmetric, zero diagonal, off-diagonal
entries in [zeta, 1 - zeta]) by projected gradient descent with a fixed
number of steps.  Derivatives are taken in the tied parametrisation (one
variable per unordered pair); inner products over the mu-block therefore sum
over the upper triangle only, see :func:`pair_dot`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .graph_stats import (
    ConfigError,
    MeanField,
    NumericError,
    _mat,
    _theta_and_spec,
    as_spec,
    scaled_potential_Tn,
    stats_vector,
    weighted_stats_gradient,
)

DENSE_HESSIAN_MAX_N = 60


@dataclass
class LowerLevelConfig:
    epsilon: float = 1e-2
    zeta: float = 1e-6
    alpha: float = 1.0
    K: int = 10

    def __post_init__(self):
        if not 0.0 < self.zeta < 0.5:
            raise ConfigError("zeta must lie in (0, 0.5)")
        if not np.isfinite(self.epsilon):
            raise ConfigError("epsilon must be finite")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if int(self.K) != self.K or self.K < 0:
            raise ConfigError("K must be a non-negative integer")
        self.K = int(self.K)


def scaled_inner_step(n: int, base: float = 0.002) -> float:
    """Inner step of the form ``base * n**2``, cancelling the 1/n^2 objective scale."""
    return base * n * n


@dataclass
class InnerTrace:
    f_values: list = field(default_factory=list)
    gmap_norms: list = field(default_factory=list)
    steps: int = 0

    def gaps(self, reference: float | None = None) -> np.ndarray:
        """f(mu_k) - reference; defaults to the last recorded value."""
        f = np.asarray(self.f_values)
        ref = f[-1] if reference is None else reference
        return f - ref


def pair_dot(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product over unordered pairs of two symmetric zero-diagonal matrices."""
    return 0.5 * float(np.vdot(a, b))


def upper_pairs(n: int):
    return np.triu_indices(n, 1)


def _off_entries(mu: np.ndarray) -> np.ndarray:
    return mu[~np.eye(mu.shape[0], dtype=bool)]


def _check_open(mu: np.ndarray) -> None:
    off = _off_entries(mu)
    if off.size and (off.min() <= 0.0 or off.max() >= 1.0):
        raise ValueError("mean-field entries must lie strictly inside (0, 1)")


def entropy_Hn(mu) -> float:
    """(1/2n^2) sum_{i != j} [mu log mu + (1 - mu) log(1 - mu)] (non-positive)."""
    m = _mat(mu)
    _check_open(m)
    n = m.shape[0]
    off = _off_entries(m)
    return float((off * np.log(off) + (1 - off) * np.log1p(-off)).sum() / (2 * n * n))


def gamma_n(theta, mu, spec=None) -> float:
    return scaled_potential_Tn(theta, mu, spec) - entropy_Hn(mu)


def f_lower(theta, mu, cfg: LowerLevelConfig, spec=None) -> float:
    m = _mat(mu)
    n = m.shape[0]
    return -gamma_n(theta, m, spec) + cfg.epsilon / (2 * n * n) * float((m * m).sum())


def grad_theta_f_lower(mu, spec=None) -> np.ndarray:
    """d f / d theta = -T(mu) / n^2 (independent of theta)."""
    m = _mat(mu)
    n = m.shape[0]
    return -stats_vector(m, spec) / (n * n)


def grad_f_lower_mu(theta, mu, cfg: LowerLevelConfig, spec=None) -> np.ndarray:
    """Tied gradient of f_eps in mu as a symmetric matrix with zero diagonal."""
    values, spec = _theta_and_spec(theta, spec)
    m = _mat(mu)
    _check_open(m)
    return _grad_mu(values, m, cfg.epsilon, spec)


def _logit_offdiag(m):
    n = m.shape[0]
    with np.errstate(divide="ignore"):
        lg = np.log(m) - np.log1p(-m)
    lg[np.diag_indices(n)] = 0.0
    return lg


def _grad_mu(values, m, epsilon, spec):
    n = m.shape[0]
    g = (_logit_offdiag(m) - weighted_stats_gradient(values, m, spec)) / (n * n)
    g += (2.0 * epsilon / (n * n)) * m
    np.fill_diagonal(g, 0.0)
    return g


def project_U(m, zeta: float = 1e-6) -> MeanField:
    """Euclidean projection onto U_zeta: symmetrise, clamp, zero the diagonal."""
    return MeanField(_project(np.asarray(m, dtype=float), zeta), zeta, check=False)


def _project(m: np.ndarray, zeta: float) -> np.ndarray:
    p = np.clip(0.5 * (m + m.T), zeta, 1.0 - zeta)
    np.fill_diagonal(p, 0.0)
    return p


def random_meanfield(n: int, rng: np.random.Generator, zeta: float = 1e-6) -> MeanField:
    """Upper triangle drawn from U[0, 1], mirrored, then projected onto U_zeta."""
    u = np.zeros((n, n))
    iu = upper_pairs(n)
    u[iu] = rng.random(len(iu[0]))
    return project_U(u + u.T, zeta)


def _pgd_fast(values, m, cfg: LowerLevelConfig, spec) -> np.ndarray:
    coef = np.zeros(3)
    z = np.zeros((1, 1))
    for th, kind in zip(values, spec.kinds):
        if kind == "dyadic_covariate":
            z = 2.0 * th * spec.covariate
        else:
            coef[("edges", "two_stars", "triangles").index(kind)] = th
    return _pgd_kernel(m, coef, np.ascontiguousarray(z), z.shape[0] > 1,
                       cfg.alpha, cfg.epsilon, cfg.zeta, cfg.K)


@numba.njit(cache=True)
def _pgd_kernel(m, coef, z, use_z, alpha, epsilon, zeta, K):
    """K projected gradient steps without bookkeeping (same arithmetic as ``_grad_mu``)."""
    n = m.shape[0]
    n2 = n * n
    m = m.copy()
    nxt = np.zeros_like(m)
    r = np.empty(n)
    for _ in range(K):
        m2 = m @ m if coef[2] != 0.0 else nxt
        for i in range(n):
            r[i] = m[i].sum()
        for i in range(n):
            for j in range(i + 1, n):
                x = m[i, j]
                w = 2.0 * coef[0]
                if coef[1] != 0.0:
                    w += coef[1] * (r[i] + r[j] - 2.0 * x) / n
                if coef[2] != 0.0:
                    w += coef[2] * m2[i, j] / n
                if use_z:
                    w += z[i, j]
                g = (np.log(x) - np.log1p(-x) - w) / n2 + (2.0 * epsilon / n2) * x
                y = min(max(x - alpha * g, zeta), 1.0 - zeta)
                nxt[i, j] = y
                nxt[j, i] = y
        m, nxt = nxt, m
    return m


def inner_loop(theta, mu0, cfg: LowerLevelConfig, spec=None, record: bool = True):
    """Exactly ``cfg.K`` projected gradient steps with fixed step ``cfg.alpha``.

    Returns ``(MeanField, InnerTrace)``.  The trace holds f at every iterate
    (K + 1 values) and the norm of the gradient map at each step.
    """
    values, spec = _theta_and_spec(theta, spec)
    m = np.array(_mat(mu0), dtype=float)
    zeta = cfg.zeta
    trace = InnerTrace()
    if not record:
        m = _pgd_fast(values, m, cfg, spec)
        trace.steps = cfg.K
        if not np.all(np.isfinite(m)):
            raise NumericError("non-finite mean-field iterate", trace)
        return MeanField(m, zeta, check=False), trace
    if record:
        trace.f_values.append(f_lower(values, m, cfg, spec))
    for _ in range(cfg.K):
        g = _grad_mu(values, m, cfg.epsilon, spec)
        m_next = _project(m - cfg.alpha * g, zeta)
        if record:
            diff = (m - m_next) / cfg.alpha
            trace.gmap_norms.append(np.sqrt(pair_dot(diff, diff)))
            f = f_lower(values, m_next, cfg, spec)
            if not np.isfinite(f):
                raise NumericError("non-finite lower-level objective in inner loop", trace)
            trace.f_values.append(f)
        m = m_next
        trace.steps += 1
    if not np.all(np.isfinite(m)):
        raise NumericError("non-finite mean-field iterate", trace)
    return MeanField(m, zeta, check=False), trace


# -- curvature diagnostics ---------------------------------------------------

def _pair_index(n):
    idx = -np.ones((n, n), dtype=np.int64)
    iu = upper_pairs(n)
    idx[iu] = np.arange(len(iu[0]))
    idx.T[iu] = idx[iu]
    return idx, iu


def hessian_f_lower_mu(theta, mu, cfg: LowerLevelConfig, spec=None) -> np.ndarray:
    """Explicit tied Hessian of f_eps over the n(n-1)/2 upper-triangle pairs."""
    values, spec = _theta_and_spec(theta, spec)
    m = _mat(mu)
    _check_open(m)
    n = m.shape[0]
    idx, iu = _pair_index(n)
    P = len(iu[0])
    H = np.zeros((P, P))
    th = dict(zip(spec.kinds, values))
    w_tri = th.get("triangles", 0.0) / n
    w_2s = th.get("two_stars", 0.0) / n
    if w_tri or w_2s:
        for i in range(n):
            others = np.delete(np.arange(n), i)
            p = idx[i, others]
            block = w_tri * m[np.ix_(others, others)] + w_2s * (1.0 - np.eye(n - 1))
            H[np.ix_(p, p)] += block
    H = -H / (n * n)
    x = m[iu]
    H[np.diag_indices(P)] += (1.0 / (x * (1.0 - x)) + 2.0 * cfg.epsilon) / (n * n)
    return H


def hessian_vector_product(values, m, v, epsilon, spec) -> np.ndarray:
    """Tied Hessian of f_eps applied to a symmetric zero-diagonal direction v."""
    n = m.shape[0]
    spec = as_spec(spec)
    out = v * (1.0 / (m * (1.0 - m) + np.eye(n)) + 2.0 * epsilon)
    for th, kind in zip(values, spec.kinds):
        if kind == "triangles":
            out -= th * (v @ m + m @ v) / n
        elif kind == "two_stars":
            r = v.sum(axis=1)
            out -= th * (r[:, None] + r[None, :] - 2.0 * v) / n
    np.fill_diagonal(out, 0.0)
    return out / (n * n)


def min_eig_hessian_estimate(theta, mu, cfg: LowerLevelConfig, spec=None) -> float:
    """Smallest eigenvalue of the tied Hessian of f_eps at (theta, mu).

    Dense eigensolve up to ``DENSE_HESSIAN_MAX_N`` nodes, Lanczos on the
    Hessian-vector product above that.
    """
    values, spec = _theta_and_spec(theta, spec)
    m = _mat(mu)
    n = m.shape[0]
    if n <= DENSE_HESSIAN_MAX_N:
        return float(np.linalg.eigvalsh(hessian_f_lower_mu(values, m, cfg, spec))[0])
    _check_open(m)
    idx, iu = _pair_index(n)
    P = len(iu[0])

    def matvec(x):
        v = np.zeros((n, n))
        v[iu] = np.ravel(x)
        v = v + v.T
        return hessian_vector_product(values, m, v, cfg.epsilon, spec)[iu]

    op = LinearOperator((P, P), matvec=matvec, dtype=float)
    v0 = np.full(P, 1.0 / np.sqrt(P))
    return float(eigsh(op, k=1, which="SA", v0=v0, return_eigenvectors=False)[0])


def lipschitz_estimate(theta, mu, cfg: LowerLevelConfig, spec=None) -> float:
    """Largest absolute row sum of the tied Hessian (Gershgorin bound on L)."""
    values, spec = _theta_and_spec(theta, spec)
    m = _mat(mu)
    n = m.shape[0]
    ones = 1.0 - np.eye(n)
    # |H| applied to the all-ones direction gives the absolute row sums
    out = ones * (1.0 / (m * (1.0 - m) + np.eye(n)) + 2.0 * abs(cfg.epsilon))
    for th, kind in zip(values, spec.kinds):
        if kind == "triangles":
            out += abs(th) * (ones @ m + m @ ones) / n
        elif kind == "two_stars":
            out += abs(th) * 2.0 * (n - 2) / n
    np.fill_diagonal(out, 0.0)
    return float(out.max() / (n * n))
