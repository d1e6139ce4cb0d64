"""Value-function bilevel estimator with a dynamic-barrier outer step.

Each outer iteration runs the projected-gradient inner loop from the current
mean-field matrix, forms the value-function surrogate

    q_hat = f_eps(theta, mu) - f_eps(theta, mu_K),

and moves (theta, mu) along

    delta = grad F + lambda * grad q_hat,
    lambda = max(0, eta - <grad F, grad q_hat> / ||grad q_hat||^2),

which is the closed-form solution of min ||grad F - delta||^2 subject to
<grad q_hat, delta> >= eta ||grad q_hat||^2.  The mu-block of grad F is zero.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .graph_stats import (
    Graph,
    MeanField,
    NumericError,
    Theta,
    _mat,
    _theta_and_spec,
    as_spec,
    scaled_potential_Tn,
    stats_vector,
)
from .meanfield import (
    LowerLevelConfig,
    _grad_mu,
    f_lower,
    inner_loop,
    pair_dot,
    random_meanfield,
)


@dataclass
class OuterConfig:
    xi: float = 0.03
    eta: float = 0.8
    T: int = 20_000
    lower: LowerLevelConfig = field(default_factory=LowerLevelConfig)
    theta0: tuple = (-1.0, 1.0)
    seed: int = 0
    gamma: float = 1.0
    schedule: str = "constant"  # or "inv_sqrt_T": xi_t = 1 / sqrt(T)

    def __post_init__(self):
        from .graph_stats import ConfigError

        if not (self.xi > 0 and self.eta > 0):
            raise ConfigError("xi and eta must be positive")
        if int(self.T) != self.T or self.T < 1:
            raise ConfigError("T must be a positive integer")
        if self.schedule not in ("constant", "inv_sqrt_T"):
            raise ConfigError(f"unknown step schedule {self.schedule!r}")
        self.T = int(self.T)
        if isinstance(self.lower, dict):
            self.lower = LowerLevelConfig(**self.lower)

    def step_size(self) -> float:
        return self.xi if self.schedule == "constant" else 1.0 / np.sqrt(self.T)


TRACE_SCALARS = ("F", "q_hat", "lambda", "delta_norm_sq", "K_t", "Phi_t", "wall_time")


@dataclass
class OuterTrace:
    theta: list = field(default_factory=list)
    F: list = field(default_factory=list)
    q_hat: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    delta_norm_sq: list = field(default_factory=list)
    K_t: list = field(default_factory=list)
    Phi_t: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    barrier_slack: list = field(default_factory=list)

    def __len__(self):
        return len(self.F)

    def columns(self, d: int) -> list[str]:
        return ["t"] + [f"theta_{k + 1}" for k in range(d)] + [
            "F", "q_hat", "lambda", "delta_norm_sq", "K_t", "Phi_t"]

    def rows(self):
        for t in range(len(self)):
            yield [t, *np.asarray(self.theta[t]).tolist(), self.F[t], self.q_hat[t],
                   self.lam[t], self.delta_norm_sq[t], self.K_t[t], self.Phi_t[t]]

    def to_csv(self, path, method: str | None = None) -> None:
        d = len(self.theta[0]) if self.theta else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = self.columns(d)
            w.writerow(cols + (["method"] if method else []))
            for row in self.rows():
                w.writerow([_fmt(x) for x in row] + ([method] if method else []))


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class EstimationResult:
    theta_hat: Theta
    mu_final: MeanField | None
    trace: OuterTrace | None
    flags: dict = field(default_factory=dict)
    method: str = "vrbea"
    info: dict = field(default_factory=dict)
    runtime: float = 0.0  # wall-clock seconds, kept out of serialised output

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "spec": list(self.theta_hat.spec.kinds),
            "theta_hat": self.theta_hat.values.tolist(),
            "flags": self.flags,
            "info": self.info,
        }


# -- objective pieces ----------------------------------------------------------

def upper_Fn(theta, g, mu_star, cfg: LowerLevelConfig, spec=None) -> float:
    """F_n(theta) = -T_n(theta | g) - f_eps(theta, mu_star)."""
    return -scaled_potential_Tn(theta, g, spec) - f_lower(theta, mu_star, cfg, spec)


def grad_Fn_theta(theta, g, mu_star, spec=None) -> np.ndarray:
    """(T(mu_star) - T(g)) / n^2; the mu-block of grad F is identically zero."""
    _, spec = _theta_and_spec(theta, spec)
    a = _mat(g)
    n = a.shape[0]
    return (stats_vector(mu_star, spec) - stats_vector(a, spec)) / (n * n)


def q_hat(theta, mu, mu_K, cfg: LowerLevelConfig, spec=None) -> float:
    return f_lower(theta, mu, cfg, spec) - f_lower(theta, mu_K, cfg, spec)


def grad_q_hat(theta, mu, mu_K, cfg: LowerLevelConfig, spec=None):
    """(theta-block, mu-block) of the surrogate gradient of q_hat."""
    values, spec = _theta_and_spec(theta, spec)
    m = _mat(mu)
    n = m.shape[0]
    g_theta = (stats_vector(mu_K, spec) - stats_vector(m, spec)) / (n * n)
    g_mu = _grad_mu(values, m, cfg.epsilon, spec)
    return g_theta, g_mu


def _block_dot(a, b) -> float:
    """Inner product of (theta-block, mu-block) pairs; a mu-block of None is zero."""
    s = float(np.dot(a[0], b[0]))
    if a[1] is not None and b[1] is not None:
        s += pair_dot(a[1], b[1])
    return s


def _as_blocks(v):
    if isinstance(v, tuple):
        return v
    return (np.asarray(v, dtype=float), None)


def barrier_multiplier(gF, gq, eta: float) -> float:
    """max(0, eta - <gF, gq> / ||gq||^2), or 0 when gq vanishes.

    Gradients are plain vectors or ``(theta_block, mu_block)`` tuples.
    """
    gF, gq = _as_blocks(gF), _as_blocks(gq)
    nq = _block_dot(gq, gq)
    if nq <= 0.0:
        return 0.0
    return max(0.0, eta - _block_dot(gF, gq) / nq)


def stationarity_K(gF, gq, q_value: float, eta: float) -> float:
    """||gF + lambda gq||^2 + q."""
    gF, gq = _as_blocks(gF), _as_blocks(gq)
    lam = barrier_multiplier(gF, gq, eta)
    d_theta = gF[0] + lam * gq[0]
    s = float(d_theta @ d_theta)
    if gq[1] is not None:
        d_mu = lam * gq[1] if gF[1] is None else gF[1] + lam * gq[1]
        s += pair_dot(d_mu, d_mu)
    elif gF[1] is not None:
        s += pair_dot(gF[1], gF[1])
    return s + q_value


def energy_Phi(F_value: float, q_value: float, gamma: float) -> float:
    return F_value + gamma * q_value


# -- outer loop ----------------------------------------------------------------

@dataclass
class OuterState:
    theta: np.ndarray
    mu: np.ndarray
    t: int = 0


@dataclass
class StepRecord:
    F: float
    q_hat: float
    lam: float
    delta_norm_sq: float
    K_t: float
    Phi_t: float
    barrier_slack: float
    mu_K: np.ndarray


class _Problem:
    """Caches graph statistics for repeated outer steps on one graph."""

    def __init__(self, g, spec):
        self.spec = as_spec(spec)
        self.adj = _mat(g)
        self.n = self.adj.shape[0]
        self.S_g = stats_vector(self.adj, self.spec)

    def evaluate(self, theta, mu, cfg: OuterConfig) -> StepRecord:
        spec, n2 = self.spec, self.n * self.n
        lower = cfg.lower
        mu_K_mf, _ = inner_loop(theta, mu, lower, spec, record=False)
        mu_K = mu_K_mf.mu
        S_mu = stats_vector(mu, spec)
        S_K = stats_vector(mu_K, spec)
        f_mu = f_lower(theta, mu, lower, spec)
        f_K = f_lower(theta, mu_K, lower, spec)
        q = f_mu - f_K
        F = -float(theta @ self.S_g) / n2 - f_K
        gF = (S_K - self.S_g) / n2
        gq_theta = (S_K - S_mu) / n2
        gq_mu = _grad_mu(theta, mu, lower.epsilon, spec)
        nq = float(gq_theta @ gq_theta) + pair_dot(gq_mu, gq_mu)
        lam = 0.0 if nq <= 0.0 else max(0.0, cfg.eta - float(gF @ gq_theta) / nq)
        d_theta = gF + lam * gq_theta
        dsq = float(d_theta @ d_theta) + lam * lam * pair_dot(gq_mu, gq_mu)
        inner = float(gq_theta @ d_theta) + lam * pair_dot(gq_mu, gq_mu)
        rec = StepRecord(
            F=F, q_hat=q, lam=lam, delta_norm_sq=dsq, K_t=dsq + q,
            Phi_t=energy_Phi(F, q, cfg.gamma), barrier_slack=inner - cfg.eta * nq,
            mu_K=mu_K)
        rec.d_theta = d_theta
        rec.d_mu = lam * gq_mu
        return rec


def _project_inplace(m, zeta):
    m = 0.5 * (m + m.T)
    np.clip(m, zeta, 1.0 - zeta, out=m)
    np.fill_diagonal(m, 0.0)
    return m


def outer_step(state: OuterState, g, cfg: OuterConfig, spec=None, problem=None):
    """One joint (theta, mu) update; returns ``(new_state, StepRecord)``."""
    problem = problem or _Problem(g, spec)
    rec = _checked(problem.evaluate(state.theta, state.mu, cfg))
    xi = cfg.step_size()
    theta = state.theta - xi * rec.d_theta
    mu = _project_inplace(state.mu - xi * rec.d_mu, cfg.lower.zeta)
    return OuterState(theta, mu, state.t + 1), rec


def _checked(rec: StepRecord) -> StepRecord:
    scalars = (rec.F, rec.q_hat, rec.lam, rec.delta_norm_sq, rec.K_t, rec.Phi_t)
    if not (np.all(np.isfinite(scalars)) and np.all(np.isfinite(rec.d_theta))
            and np.all(np.isfinite(rec.d_mu))):
        raise NumericError("non-finite outer direction or objective")
    return rec


def initial_state(n: int, cfg: OuterConfig, spec=None, theta0=None) -> OuterState:
    spec = as_spec(spec)
    rng = np.random.default_rng(cfg.seed)
    mu0 = random_meanfield(n, rng, cfg.lower.zeta).mu
    th = np.array(cfg.theta0 if theta0 is None else theta0, dtype=float)
    Theta(th, spec)
    return OuterState(th, mu0, 0)


def vrbea_estimate(g: Graph, cfg: OuterConfig, spec=None, theta0=None,
                   record_every: int = 1) -> EstimationResult:
    """Run ``cfg.T`` outer iterations from theta0 and a seeded uniform mu0.

    ``record_every`` thins the stored trace (the final row is always kept).
    A numeric failure stops the run and returns the partial result with
    ``flags['nonfinite'] = True``.
    """
    spec = as_spec(spec)
    problem = _Problem(g, spec)
    state = initial_state(problem.n, cfg, spec, theta0)
    trace = OuterTrace()
    flags = {"nonfinite": False}
    start = time.perf_counter()

    def log(t, th, rec):
        trace.theta.append(th.copy())
        trace.F.append(rec.F)
        trace.q_hat.append(rec.q_hat)
        trace.lam.append(rec.lam)
        trace.delta_norm_sq.append(rec.delta_norm_sq)
        trace.K_t.append(rec.K_t)
        trace.Phi_t.append(rec.Phi_t)
        trace.barrier_slack.append(rec.barrier_slack)
        trace.wall_time.append(time.perf_counter() - start)

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(cfg.T):
                prev = state.theta
                state, rec = outer_step(state, g, cfg, spec, problem)
                if t % record_every == 0:
                    log(t, prev, rec)
                if not np.all(np.isfinite(state.theta)):
                    raise NumericError("non-finite theta")
            final = _checked(problem.evaluate(state.theta, state.mu, cfg))
            log(cfg.T, state.theta, final)
    except NumericError:
        flags["nonfinite"] = True
    theta_hat = state.theta if np.all(np.isfinite(state.theta)) else np.asarray(trace.theta[-1])
    return EstimationResult(
        theta_hat=Theta(theta_hat, spec),
        mu_final=MeanField(state.mu, cfg.lower.zeta, check=False),
        trace=trace,
        flags=flags,
        method="vrbea",
        info={"T": cfg.T, "final_F": trace.F[-1] if trace.F else None,
              "final_q_hat": trace.q_hat[-1] if trace.q_hat else None},
        runtime=time.perf_counter() - start,
    )
