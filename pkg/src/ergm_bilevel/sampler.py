"""Single-dyad Metropolis sampler for ERGMs.

A chain proposes a uniformly random unordered pair and flips it with
probability min(1, exp(dQ)), where dQ is the change in the unscaled potential.
Random numbers come from a seeded ``numpy.random.Generator`` in chunks and
the toggling itself runs in a numba kernel that also keeps the statistics of
the current state up to date, so retained samples come with their
statistics for free.

Retained graphs are stored as bit rows over the upper triangle in row-major
order; :func:`graph_code` packs such a row into an integer with pair ``p`` at
bit ``p``, the same order the exact enumerator uses.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numba
import numpy as np
from scipy.special import expit

from .graph_stats import ConfigError, Graph, _theta_and_spec, as_spec, stats_vector

CHUNK = 1 << 16

_KIND_CODES = {"edges": 0, "two_stars": 1, "triangles": 2, "dyadic_covariate": 3}


@dataclass
class SamplerConfig:
    burn_in: int | None = None  # default 1e5 * n toggles
    thinning: int | None = None  # default 10 * n toggles
    count: int = 1
    init_p: float | None = None  # default sigmoid(theta_1)
    seed: int = 0
    gibbs: bool = False

    def __post_init__(self):
        for name in ("burn_in", "thinning"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 0):
                raise ConfigError(f"{name} must be a non-negative integer")
        if int(self.count) != self.count or self.count < 0:
            raise ConfigError("count must be a non-negative integer")
        if self.init_p is not None and not 0.0 <= self.init_p <= 1.0:
            raise ConfigError("init_p must lie in [0, 1]")

    def resolved(self, n: int, theta_values) -> "SamplerConfig":
        return SamplerConfig(
            burn_in=int(100_000 * n if self.burn_in is None else self.burn_in),
            thinning=int(max(1, 10 * n if self.thinning is None else self.thinning)),
            count=int(self.count),
            init_p=float(expit(theta_values[0]) if self.init_p is None else self.init_p),
            seed=int(self.seed),
            gibbs=bool(self.gibbs),
        )


def er_init(n: int, p: float, rng: np.random.Generator) -> Graph:
    if not 0.0 <= p <= 1.0:
        raise ConfigError("edge probability must lie in [0, 1]")
    iu = np.triu_indices(n, 1)
    a = np.zeros((n, n), dtype=np.int8)
    a[iu] = rng.random(len(iu[0])) < p
    return Graph(a + a.T)


def toggle_delta(g, i: int, j: int, theta, spec=None) -> float:
    """Q(theta | g with dyad ij flipped) - Q(theta | g)."""
    from .graph_stats import _mat, change_stats

    values, spec = _theta_and_spec(theta, spec)
    a = _mat(g)
    sign = 1.0 if a[i, j] == 0 else -1.0
    return sign * float(values @ change_stats(a, i, j, spec))


@numba.njit(cache=True)
def _change(adj, deg, i, j, codes, z, n, out):
    for s in range(codes.shape[0]):
        c = codes[s]
        if c == 0:
            out[s] = 2.0
        elif c == 1:
            out[s] = (deg[i] + deg[j] - 2 * adj[i, j]) / n
        elif c == 2:
            common = 0
            for k in range(n):
                common += adj[i, k] * adj[j, k]
            out[s] = common / n
        else:
            out[s] = 2.0 * z[i, j]


@numba.njit(cache=True)
def _run_chunk(adj, deg, stats, codes, theta, z, pi, pj, pick, u, gibbs,
               step0, burn_in, thinning, bits, samples, n_done):
    """Advance the chain over one chunk of proposals.

    Returns the updated number of retained samples.  A sample is kept after
    every ``thinning`` toggles once ``burn_in`` toggles have elapsed.
    """
    n = adj.shape[0]
    d = codes.shape[0]
    delta = np.empty(d)
    target = bits.shape[0]
    P = pi.shape[0]
    for r in range(pick.shape[0]):
        if n_done >= target:
            break
        p = pick[r]
        i = pi[p]
        j = pj[p]
        _change(adj, deg, i, j, codes, z, n, delta)
        dq_add = 0.0
        for s in range(d):
            dq_add += theta[s] * delta[s]
        on = adj[i, j] == 1
        if gibbs:
            new_on = u[r] < 1.0 / (1.0 + np.exp(-dq_add))
        else:
            dq = -dq_add if on else dq_add
            new_on = (not on) if (dq >= 0.0 or u[r] < np.exp(dq)) else on
        if new_on != on:
            sign = 1.0 if new_on else -1.0
            v = 1 if new_on else 0
            adj[i, j] = v
            adj[j, i] = v
            deg[i] += 2 * v - 1
            deg[j] += 2 * v - 1
            for s in range(d):
                stats[s] += sign * delta[s]
        step = step0 + r + 1
        if step > burn_in and (step - burn_in) % thinning == 0:
            for q in range(P):
                bits[n_done, q] = adj[pi[q], pj[q]]
            for s in range(d):
                samples[n_done, s] = stats[s]
            n_done += 1
    return n_done


class SampleSet:
    """Retained states of one chain: upper-triangle bit rows plus statistics."""

    def __init__(self, n: int, bits: np.ndarray, stats: np.ndarray, spec, theta, config):
        self.n = n
        self.bits = bits
        self.stats = stats
        self.spec = as_spec(spec)
        self.theta = np.asarray(theta, dtype=float)
        self.config = config

    def __len__(self):
        return self.bits.shape[0]

    def __getitem__(self, k) -> Graph:
        return bits_to_graph(self.bits[k], self.n)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def codes(self) -> np.ndarray:
        return graph_code(self.bits)

    def densities(self) -> np.ndarray:
        return self.bits.mean(axis=1)


def bits_to_graph(row, n: int) -> Graph:
    a = np.zeros((n, n), dtype=np.int8)
    a[np.triu_indices(n, 1)] = row
    return Graph(a + a.T)


def graph_code(bits) -> np.ndarray:
    """Integer code of each bit row: pair p (row-major upper triangle) is bit p."""
    bits = np.atleast_2d(bits).astype(np.int64)
    weights = np.left_shift(np.int64(1), np.arange(bits.shape[1], dtype=np.int64))
    return bits @ weights


def metropolis_sample(theta, cfg: SamplerConfig, spec=None, n: int | None = None,
                      init: Graph | None = None) -> SampleSet:
    """Run one seeded chain and keep ``cfg.count`` thinned states."""
    values, spec = _theta_and_spec(theta, spec)
    if init is None and n is None:
        raise ConfigError("metropolis_sample needs n or an initial graph")
    n = init.n if init is not None else int(n)
    if n < 2:
        raise ConfigError("need at least two nodes")
    rc = cfg.resolved(n, values)
    rng = np.random.default_rng(rc.seed)
    if init is None:
        init = er_init(n, rc.init_p, rng)
    adj = init.matrix.astype(np.int64)
    deg = adj.sum(axis=1)
    stats = stats_vector(init, spec)
    codes = np.array([_KIND_CODES[k] for k in spec.kinds], dtype=np.int64)
    z = spec.covariate if spec.covariate is not None else np.zeros((1, 1))
    z = np.ascontiguousarray(z, dtype=np.float64)
    pi, pj = (x.astype(np.int64) for x in np.triu_indices(n, 1))
    P = pi.shape[0]
    bits = np.zeros((rc.count, P), dtype=np.uint8)
    samples = np.zeros((rc.count, spec.dim))
    total = rc.burn_in + rc.thinning * rc.count
    step, done = 0, 0
    while done < rc.count and step < total:
        size = min(CHUNK, total - step)
        pick = rng.integers(0, P, size=size)
        u = rng.random(size)
        done = _run_chunk(adj, deg, stats, codes, values, z, pi, pj, pick, u, rc.gibbs,
                          step, rc.burn_in, rc.thinning, bits, samples, done)
        step += size
    return SampleSet(n, bits, samples, spec, values, rc)


def degeneracy_report(samples, spec=None, low: float = 0.05, high: float = 0.95) -> dict:
    """Share of near-empty / near-complete samples and edge/triangle moments."""
    if isinstance(samples, SampleSet):
        dens = samples.densities()
        n = samples.n
        tri_spec = as_spec(("edges", "triangles"))
        if samples.spec.kinds[:2] == tri_spec.kinds:
            st = samples.stats[:, :2]
        else:
            st = np.array([stats_vector(g, tri_spec) for g in samples])
    else:
        graphs = list(samples)
        if not graphs:
            raise ValueError("degeneracy_report needs at least one sample")
        dens = np.array([g.density() for g in graphs])
        n = graphs[0].n
        st = np.array([stats_vector(g, ("edges", "triangles")) for g in graphs])
    if len(dens) == 0:
        raise ValueError("degeneracy_report needs at least one sample")
    edges = st[:, 0] / 2.0
    triangles = st[:, 1] * n
    return {
        "n_samples": int(len(dens)),
        "near_empty_fraction": float(np.mean(dens < low)),
        "near_complete_fraction": float(np.mean(dens > high)),
        "extreme_fraction": float(np.mean((dens < low) | (dens > high))),
        "mean_density": float(dens.mean()),
        "edge_mean": float(edges.mean()),
        "edge_var": float(edges.var()),
        "triangle_mean": float(triangles.mean()),
        "triangle_var": float(triangles.var()),
        "almost_complete": bool(np.mean(dens > high) > 0.5),
    }


# -- packed run files ----------------------------------------------------------

def write_packed(samples: SampleSet, path) -> None:
    """One JSON header line, then one 0/1 upper-triangle bitmap per line."""
    header = {"n": samples.n, "spec": list(samples.spec.kinds),
              "theta": samples.theta.tolist(), **{k: v for k, v in asdict(samples.config).items()}}
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for row in samples.bits:
            fh.write("".join("1" if b else "0" for b in row) + "\n")


def read_packed(path) -> tuple[dict, list[Graph]]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigError(f"{path}: missing packed-file header")
        header = json.loads(first[2:])
        n = int(header["n"])
        graphs = []
        for line in fh:
            line = line.strip()
            if line:
                graphs.append(bits_to_graph(np.frombuffer(line.encode(), dtype=np.uint8) - ord("0"), n))
    return header, graphs
