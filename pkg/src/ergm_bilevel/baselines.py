"""Comparison estimators: fixed-point mean field, MPLE and MCMC-MLE.

The fixed-point estimator iterates the sigmoid map

    mu_ij <- sigmoid(c * theta_1 + (theta_2 / n) * sum_k mu_jk mu_ki)

from a random start until the change in the mean-field value psi falls below
a tolerance, keeps the best of several starts, and maximises the resulting
approximate likelihood with BFGS.  ``c`` is the edge factor; the default 1
follows the map as usually written, ``c = 2`` is the exact stationarity
condition under the ordered-pair edge statistic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .bilevel import EstimationResult
from .graph_stats import (
    EDGE_TRIANGLE,
    ConfigError,
    Graph,
    MeanField,
    Theta,
    _mat,
    _theta_and_spec,
    as_spec,
    change_stats,
    scaled_potential_Tn,
    stats_vector,
)
from .meanfield import entropy_Hn, random_meanfield
from .sampler import SamplerConfig, metropolis_sample


# -- fixed-point mean field ------------------------------------------------------

@dataclass
class MzConfig:
    eps_tol: float = 1e-8
    K_starts: int = 1
    max_inner: int = 1000
    outer_max_iter: int = 100
    outer_tol: float = 1e-6
    fd_step: float = 1e-5
    max_backtracks: int = 30
    armijo: float = 1e-4
    edge_factor: float = 1.0
    absolute_diff: bool = False
    warm_start: bool = True
    zeta: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.eps_tol > 0:
            raise ConfigError("eps_tol must be positive")
        if int(self.K_starts) != self.K_starts or self.K_starts < 1:
            raise ConfigError("K_starts must be a positive integer")
        if self.outer_max_iter < 0 or self.max_inner < 1:
            raise ConfigError("iteration caps must be positive")


def _mf_value(theta_values, m, spec) -> float:
    """psi^MF at a given mean-field matrix: T_n(theta | mu) - H_n(mu)."""
    return scaled_potential_Tn(theta_values, m, spec) - entropy_Hn(m)


def _mz_map(th1, th2, m, n, edge_factor, zeta):
    out = expit(edge_factor * th1 + (th2 / n) * (m @ m))
    np.clip(out, zeta, 1.0 - zeta, out=out)
    np.fill_diagonal(out, 0.0)
    return out


def mz_fixed_point_inner(theta, mu0, eps_tol: float = 1e-8, cfg: MzConfig | None = None):
    """Iterate the sigmoid map; returns ``(MeanField, iterations, psi_trace)``.

    The loop stops at the first step whose change in psi is below
    ``eps_tol`` (signed, unless ``cfg.absolute_diff``).  ``iterations``
    counts the updates accepted before that step, so a start that is already
    (numerically) stationary reports 0.
    """
    cfg = cfg or MzConfig(eps_tol=eps_tol)
    values, spec = _theta_and_spec(theta, EDGE_TRIANGLE)
    th1, th2 = values
    m = np.array(_mat(mu0), dtype=float)
    n = m.shape[0]
    psi = [_mf_value(values, m, spec)]
    iterations = 0
    for _ in range(cfg.max_inner):
        nxt = _mz_map(th1, th2, m, n, cfg.edge_factor, cfg.zeta)
        psi_next = _mf_value(values, nxt, spec)
        psi.append(psi_next)
        diff = psi_next - psi[-2]
        if cfg.absolute_diff:
            diff = abs(diff)
        m = nxt
        if diff < eps_tol:
            break
        iterations += 1
    return MeanField(m, cfg.zeta, check=False), iterations, psi


def fixed_point_residual(theta, mu, cfg: MzConfig | None = None) -> float:
    """Largest entry change when the map is applied once more."""
    cfg = cfg or MzConfig()
    th1, th2 = np.asarray(_theta_and_spec(theta, EDGE_TRIANGLE)[0])
    m = _mat(mu)
    return float(np.abs(_mz_map(th1, th2, m, m.shape[0], cfg.edge_factor, cfg.zeta) - m).max())


def mz_multistart_psi(theta, n: int, cfg: MzConfig, rng=None, details: bool = False):
    """Best psi^MF over ``cfg.K_starts`` uniform random starts."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    best, iters = -np.inf, []
    best_mu = None
    for _ in range(cfg.K_starts):
        mu0 = random_meanfield(n, rng, cfg.zeta)
        mu, it, psi = mz_fixed_point_inner(theta, mu0, cfg.eps_tol, cfg)
        iters.append(it)
        if psi[-1] > best:
            best, best_mu = psi[-1], mu
    if details:
        return best, best_mu, iters
    return best


def _bfgs(fun, x0, cfg: MzConfig):
    """Minimise ``fun`` with BFGS and Armijo backtracking on FD gradients.

    Returns ``(x, f, n_iter, message)``; the message mirrors the usual
    quasi-Newton termination reasons.
    """
    h = cfg.fd_step

    def grad(x):
        g = np.empty_like(x)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = h
            g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
        return g

    x = np.asarray(x0, dtype=float)
    f, g = fun(x), grad(x)
    H = np.eye(x.size)
    message = "maximum number of iterations reached"
    it = 0
    for it in range(1, cfg.outer_max_iter + 1):
        if not np.all(np.isfinite(g)):
            message = "abnormal termination: non-finite gradient"
            break
        if np.linalg.norm(g) < cfg.outer_tol:
            message = "converged: gradient norm below tolerance"
            break
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(x.size)
            p, slope = -g, -float(g @ g)
        step, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            x_new = x + step * p
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + cfg.armijo * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "abnormal termination in line search"
            break
        g_new = grad(x_new)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-12:
            rho = 1.0 / sy
            I = np.eye(x.size)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        if abs(f - f_new) < cfg.outer_tol * max(1.0, abs(f)):
            x, f, g = x_new, f_new, g_new
            message = "converged: relative reduction of f below tolerance"
            break
        x, f, g = x_new, f_new, g_new
    return x, f, it, message


def mz_estimate(g, cfg: MzConfig, theta0=(-1.0, 1.0)) -> EstimationResult:
    """Maximise T_n(theta | g) - psi^MF(theta) over edge-triangle theta by BFGS.

    The first objective evaluation takes the best of ``cfg.K_starts`` seeded
    uniform starts.  With ``cfg.warm_start`` every later evaluation restarts
    the fixed-point map from the previous evaluation's output, as an
    optimiser driving a stateful inner solver does; otherwise each evaluation
    repeats the same seeded multi-start.
    """
    spec = as_spec(EDGE_TRIANGLE)
    a = _mat(g)
    n = a.shape[0]
    s_g = stats_vector(a, spec) / n**2
    inner_iters: list[int] = []
    last = {"mu": None}
    start = time.perf_counter()

    def neg_loglik(x):
        if cfg.warm_start and last["mu"] is not None:
            mu, it, psi_trace = mz_fixed_point_inner(x, last["mu"], cfg.eps_tol, cfg)
            psi, iters = psi_trace[-1], [it]
        else:
            psi, mu, iters = mz_multistart_psi(x, n, cfg, np.random.default_rng(cfg.seed),
                                               details=True)
        last["mu"] = mu
        inner_iters.append(max(iters))
        return -(float(x @ s_g) - psi)

    x, f, it, message = _bfgs(neg_loglik, np.asarray(theta0, dtype=float), cfg)
    finite = bool(np.all(np.isfinite(x)))
    theta_hat = x if finite else np.asarray(theta0, dtype=float)
    later = inner_iters[1:] or inner_iters
    return EstimationResult(
        theta_hat=Theta(theta_hat, spec),
        mu_final=last["mu"],
        trace=None,
        flags={"nonfinite": not finite, "line_search_failure": "line search" in message},
        method="mz",
        info={"message": message, "outer_iterations": it, "loglik": -f,
              "inner_iterations": inner_iters,
              "median_inner_iterations": float(np.median(later))},
        runtime=time.perf_counter() - start,
    )


# -- maximum pseudo-likelihood ---------------------------------------------------

@dataclass
class MpleConfig:
    newton_max_iter: int = 100
    newton_tol: float = 1e-10
    ridge: float = 1e-10
    separation_bound: float = 30.0

    def __post_init__(self):
        if not (self.newton_tol > 0 and self.newton_max_iter > 0):
            raise ConfigError("newton_tol and newton_max_iter must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")


def mple_change_stats(g, i: int, j: int, spec=None) -> np.ndarray:
    """T(g with ij present) - T(g with ij absent)."""
    return change_stats(g, i, j, spec)


def mple_design(g, spec=None):
    """Dyad responses and change-statistic covariates over the upper triangle."""
    spec = as_spec(spec)
    a = _mat(g)
    n = a.shape[0]
    iu = np.triu_indices(n, 1)
    X = np.empty((len(iu[0]), spec.dim))
    for s, kind in enumerate(spec.kinds):
        if kind == "edges":
            X[:, s] = 2.0
        elif kind == "two_stars":
            r = a.sum(axis=1)
            X[:, s] = (r[iu[0]] + r[iu[1]] - 2.0 * a[iu]) / n
        elif kind == "triangles":
            X[:, s] = (a @ a)[iu] / n
        else:
            X[:, s] = 2.0 * spec.covariate[iu]
    return a[iu], X


def _pseudo_loglik(beta, y, X) -> float:
    eta = X @ beta
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def mple_estimate(g, cfg: MpleConfig | None = None, spec=None) -> EstimationResult:
    """Logistic regression of dyad states on change statistics by damped Newton."""
    cfg = cfg or MpleConfig()
    spec = as_spec(spec)
    y, X = mple_design(g, spec)
    beta = np.zeros(spec.dim)
    ll = _pseudo_loglik(beta, y, X)
    path = [ll]
    converged = False
    for _ in range(cfg.newton_max_iter):
        p = expit(X @ beta)
        score = X.T @ (y - p)
        info = (X * (p * (1 - p))[:, None]).T @ X + cfg.ridge * np.eye(spec.dim)
        step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand = beta + t * step
            ll_new = _pseudo_loglik(cand, y, X)
            if ll_new >= ll - 1e-12:
                break
            t *= 0.5
        beta, moved = cand, np.abs(cand - beta).max()
        ll = ll_new
        path.append(ll)
        if moved < cfg.newton_tol * (1 + np.abs(beta).max()) or np.abs(beta).max() > 1e6:
            converged = moved < cfg.newton_tol * (1 + np.abs(beta).max())
            break
    p = expit(X @ beta)
    info = (X * (p * (1 - p))[:, None]).T @ X
    try:
        se = np.sqrt(np.diag(np.linalg.inv(info)))
    except np.linalg.LinAlgError:
        se = np.full(spec.dim, np.inf)
    separated = bool(y.min() == y.max() or np.abs(beta).max() > cfg.separation_bound
                     or not np.all(np.isfinite(se)))
    finite = bool(np.all(np.isfinite(beta)))
    return EstimationResult(
        theta_hat=Theta(beta if finite else np.zeros(spec.dim), spec),
        mu_final=None,
        trace=None,
        flags={"nonfinite": not finite, "separation": separated, "converged": converged,
               "se_biased": True},
        method="mple",
        info={"se": se.tolist(), "pseudo_loglik": ll, "pseudo_loglik_path": path},
    )


# -- MCMC-MLE --------------------------------------------------------------------

@dataclass
class McmcMleConfig:
    burn_in: int | None = None
    thinning: int | None = None
    M: int = 1000
    step: float = 1.0
    tol: float = 1e-3
    max_iter: int = 10
    ridge: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.M < 2 or self.max_iter < 1:
            raise ConfigError("M must be at least 2 and max_iter positive")
        if not (self.step > 0 and self.tol > 0):
            raise ConfigError("step and tol must be positive")


def mcmc_score_hessian(theta, s_obs, n: int, cfg: McmcMleConfig, spec, seed: int,
                       init: Graph | None = None):
    """Sampled score T(g) - E[T] and Hessian -Cov(T) at theta."""
    samples = metropolis_sample(
        theta, SamplerConfig(burn_in=cfg.burn_in, thinning=cfg.thinning, count=cfg.M, seed=seed),
        spec, n=n, init=init)
    st = samples.stats
    score = s_obs - st.mean(axis=0)
    hess = -np.cov(st, rowvar=False).reshape(len(s_obs), len(s_obs))
    return score, hess, samples


def mcmc_mle_estimate(g, cfg: McmcMleConfig | None = None, spec=None,
                      theta0=None) -> EstimationResult:
    """Newton iteration theta <- theta - step * H^-1 s with sampled moments."""
    cfg = cfg or McmcMleConfig()
    spec = as_spec(spec)
    a = _mat(g)
    n = a.shape[0]
    s_obs = stats_vector(a, spec)
    theta = np.zeros(spec.dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.max_iter)
    path = [theta.copy()]
    degenerate = False
    converged = False
    for it in range(cfg.max_iter):
        score, hess, samples = mcmc_score_hessian(theta, s_obs, n, cfg, spec, int(seeds[it]))
        dens = samples.densities()
        if np.all(dens <= 0.0) or np.all(dens >= 1.0) or np.allclose(hess, 0.0):
            degenerate = True
        H = hess - cfg.ridge * max(1.0, np.abs(hess).max()) * np.eye(spec.dim)
        try:
            direction = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            degenerate = True
            break
        new = theta - cfg.step * direction
        if not np.all(np.isfinite(new)):
            degenerate = True
            break
        moved = float(np.linalg.norm(new - theta))
        theta = new
        path.append(theta.copy())
        if moved < cfg.tol:
            converged = True
            break
    finite = bool(np.all(np.isfinite(theta)))
    return EstimationResult(
        theta_hat=Theta(theta if finite else path[0], spec),
        mu_final=None,
        trace=None,
        flags={"nonfinite": not finite, "degenerate": degenerate, "converged": converged},
        method="mcmc_mle",
        info={"iterations": len(path) - 1, "path": [p.tolist() for p in path]},
    )
