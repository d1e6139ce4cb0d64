"""Replication harness: sample networks, run estimators, aggregate.

Seeds follow a counter scheme.  Replication ``r`` of a design with master
seed ``s`` draws all of its randomness from ``SeedSequence(s, spawn_key=(r,))``,
which yields five words used, in order, for the network sampler, the VRBEA
mean-field start, the fixed-point starts, the MCMC-MLE chains and the
initial-value perturbation.  Replication r is therefore the same whatever R is
and however the work is scheduled.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import McmcMleConfig, MpleConfig, MzConfig, mcmc_mle_estimate, mple_estimate, mz_estimate
from .bilevel import OuterConfig, vrbea_estimate
from .graph_stats import EDGE_TRIANGLE, ConfigError, NumericError, as_spec
from .meanfield import LowerLevelConfig, scaled_inner_step
from .sampler import SamplerConfig, metropolis_sample

ESTIMATORS = ("vrbea", "mz", "mple", "mcmc_mle")
OUTLIER_THRESHOLD = 1000.0
HIST_BINS = 30


@dataclass
class McDesign:
    n: int = 50
    truth: tuple = (-1.0, 1.0)
    spec: tuple = EDGE_TRIANGLE
    R: int = 50
    estimators: tuple = ESTIMATORS
    init_mode: str = "truth"  # or "perturbed": truth + U[-c, c] per coordinate
    perturb_c: float = 0.0
    alpha_auto: bool = True  # inner step 0.002 * n**2
    record_timing: bool = False
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    vrbea: OuterConfig = field(default_factory=OuterConfig)
    mz: MzConfig = field(default_factory=MzConfig)
    mple: MpleConfig = field(default_factory=MpleConfig)
    mcmc_mle: McmcMleConfig = field(default_factory=McmcMleConfig)

    def __post_init__(self):
        self.truth = tuple(float(x) for x in self.truth)
        self.spec = tuple(self.spec)
        self.estimators = tuple(self.estimators)
        if int(self.R) != self.R or self.R < 1:
            raise ConfigError("R must be a positive integer")
        if self.n < 3:
            raise ConfigError("n must be at least 3")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}; expected one of {ESTIMATORS}")
        if self.init_mode not in ("truth", "perturbed"):
            raise ConfigError("init_mode must be 'truth' or 'perturbed'")
        if self.perturb_c < 0:
            raise ConfigError("perturb_c must be non-negative")
        if len(self.truth) != as_spec(self.spec).dim:
            raise ConfigError("truth has the wrong dimension for spec")
        if "mz" in self.estimators and self.spec != EDGE_TRIANGLE:
            raise ConfigError("the fixed-point estimator needs the edge-triangle spec")
        for name, cls in _NESTED.items():
            v = getattr(self, name)
            if isinstance(v, dict):
                setattr(self, name, from_dict(cls, v))

    def param_names(self) -> list[str]:
        return list(self.spec)

    def outer_config(self) -> OuterConfig:
        cfg = self.vrbea
        if self.alpha_auto:
            cfg = replace(cfg, lower=replace(cfg.lower, alpha=scaled_inner_step(self.n)))
        return cfg

    def to_dict(self) -> dict:
        return to_dict(self)


_NESTED = {"sampler": SamplerConfig, "vrbea": OuterConfig, "mz": MzConfig,
           "mple": MpleConfig, "mcmc_mle": McmcMleConfig}
_NESTED_OF = {OuterConfig: {"lower": LowerLevelConfig}, McDesign: _NESTED}


def to_dict(obj) -> dict:
    """Plain dict of a config dataclass with tuples turned into lists."""
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return v.item()
        return v
    return clean(asdict(obj))


def from_dict(cls, data: dict):
    """Build a config dataclass, rejecting keys it does not define."""
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} expects a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    for name, sub in _NESTED_OF.get(cls, {}).items():
        if name in kwargs and isinstance(kwargs[name], dict):
            kwargs[name] = from_dict(sub, kwargs[name])
    for name in ("theta0", "truth", "spec", "estimators"):
        if name in kwargs and isinstance(kwargs[name], list):
            kwargs[name] = tuple(kwargs[name])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- replications ----------------------------------------------------------------

def replication_seeds(master_seed: int, r: int) -> dict:
    words = np.random.SeedSequence(master_seed, spawn_key=(r,)).generate_state(5)
    return dict(zip(("sampler", "vrbea", "mz", "mcmc_mle", "perturb"), (int(w) for w in words)))


def initial_theta(design: McDesign, seeds: dict) -> np.ndarray:
    truth = np.array(design.truth)
    if design.init_mode == "truth" or design.perturb_c == 0:
        return truth
    rng = np.random.default_rng(seeds["perturb"])
    return truth + rng.uniform(-design.perturb_c, design.perturb_c, size=truth.size)


def sample_network(design: McDesign, seeds: dict):
    cfg = replace(design.sampler, count=1, seed=seeds["sampler"])
    return metropolis_sample(design.truth, cfg, design.spec, n=design.n)[0]


def run_replication(design: McDesign, r: int) -> list[dict]:
    """All requested estimators on replication r's network; one record each."""
    seeds = replication_seeds(design.seed, r)
    g = sample_network(design, seeds)
    theta0 = initial_theta(design, seeds)
    spec = as_spec(design.spec)
    rows = []
    for name in design.estimators:
        row = {"replication": r, "estimator": name, "status": "ok",
               "final_F": "", "final_q_hat": "", "inner_iterations": ""}
        try:
            if name == "vrbea":
                cfg = replace(design.outer_config(), seed=seeds["vrbea"])
                res = vrbea_estimate(g, cfg, spec, theta0=theta0)
                row["final_F"] = res.info["final_F"]
                row["final_q_hat"] = res.info["final_q_hat"]
            elif name == "mz":
                res = mz_estimate(g, replace(design.mz, seed=seeds["mz"]), theta0=theta0)
                row["inner_iterations"] = res.info["median_inner_iterations"]
            elif name == "mple":
                res = mple_estimate(g, design.mple, spec)
            else:
                res = mcmc_mle_estimate(g, replace(design.mcmc_mle, seed=seeds["mcmc_mle"]),
                                        spec, theta0=theta0)
            if res.flags.get("nonfinite"):
                row["status"] = "nonfinite"
            row["theta"] = res.theta_hat.values.tolist()
            row["runtime"] = res.runtime
        except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
            row["status"] = f"failed: {type(exc).__name__}"
            row["theta"] = [float("nan")] * spec.dim
            row["runtime"] = 0.0
        rows.append(row)
    return rows


def _run_one(args):
    design, r = args
    return run_replication(design, r)


def run_replications(design: McDesign, jobs: int = 1) -> list[dict]:
    tasks = [(design, r) for r in range(design.R)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_one, tasks))
    else:
        chunks = [_run_one(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda row: (row["replication"], ESTIMATORS.index(row["estimator"])))
    return rows


# -- aggregation -----------------------------------------------------------------

def _moments(x: np.ndarray, truth: float) -> dict:
    if x.size == 0:
        return {k: float("nan") for k in ("mean", "bias", "se")}
    mean = float(x.mean())
    return {"mean": mean, "bias": abs(mean - truth),
            "se": float(x.std(ddof=1)) if x.size > 1 else 0.0}


def summarize(estimates, truth, names=None) -> list[dict]:
    """One summary row per parameter.

    ``bias`` is |mean - truth| (the signed mean is reported separately),
    ``MAD`` the mean absolute deviation from the truth and ``se`` the sample
    standard deviation (0 for a single estimate).  Outliers are estimates with
    absolute value above 1000; they stay in the full-sample moments and the
    ``trimmed_*`` columns repeat the moments without them.
    """
    est = np.array([getattr(e, "values", e) for e in estimates], dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if est.shape[0] == 0:
        raise ValueError("summarize needs at least one estimate")
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    names = names or [f"theta_{k + 1}" for k in range(truth.size)]
    rows = []
    for k, name in enumerate(names):
        x = est[:, k]
        t = truth[k]
        full = _moments(x, t)
        inlier = x[np.abs(x) <= OUTLIER_THRESHOLD]
        trimmed = _moments(inlier, t)
        rows.append({
            "parameter": name,
            "truth": t,
            "bias": full["bias"],
            "mean": full["mean"],
            "median": float(np.median(x)),
            "MAD": float(np.mean(np.abs(x - t))),
            "se": full["se"],
            "q05": float(np.quantile(x, 0.05)),
            "q95": float(np.quantile(x, 0.95)),
            "sign_recovery_pct": float(100.0 * np.mean(np.sign(x) == np.sign(t))),
            "outlier_count": int(np.sum(np.abs(x) > OUTLIER_THRESHOLD)),
            "trimmed_mean": trimmed["mean"],
            "trimmed_bias": trimmed["bias"],
            "trimmed_se": trimmed["se"],
        })
    return rows


@dataclass
class McSummary:
    design: McDesign
    rows: list  # per-replication records
    table: list  # per estimator x parameter summary rows

    def estimates(self, estimator: str, ok_only: bool = True) -> np.ndarray:
        sel = [r["theta"] for r in self.rows if r["estimator"] == estimator
               and (r["status"] == "ok" or not ok_only)]
        return np.array(sel, dtype=float).reshape(-1, len(self.design.truth))

    def row(self, estimator: str, parameter: str) -> dict:
        for r in self.table:
            if r["estimator"] == estimator and r["parameter"] == parameter:
                return r
        raise KeyError((estimator, parameter))


def aggregate(design: McDesign, rows: list[dict]) -> list[dict]:
    table = []
    for name in design.estimators:
        mine = [r for r in rows if r["estimator"] == name]
        ok = [r for r in mine if r["status"] == "ok"]
        failed = len(mine) - len(ok)
        if not ok:
            continue
        for srow in summarize([r["theta"] for r in ok], design.truth, design.param_names()):
            out = {"estimator": name, **srow, "failed_count": failed, "n_ok": len(ok)}
            if design.record_timing:
                out["mean_runtime"] = float(np.mean([r["runtime"] for r in ok]))
            table.append(out)
    return table


def run_design(design: McDesign, jobs: int = 1) -> McSummary:
    rows = run_replications(design, jobs)
    return McSummary(design, rows, aggregate(design, rows))


def sweep_regularization(design: McDesign, eps_grid, jobs: int = 1) -> list[dict]:
    """VRBEA over the design's replications for each epsilon; one row per (eps, parameter)."""
    return _sweep(design, "epsilon", eps_grid, jobs)


def sweep_eta(design: McDesign, eta_grid, jobs: int = 1) -> list[dict]:
    """VRBEA for each eta; rows carry the mean terminal F and q_hat."""
    return _sweep(design, "eta", eta_grid, jobs)


def _sweep(design: McDesign, key: str, grid, jobs: int) -> list[dict]:
    grid = list(grid)
    if not grid:
        raise ConfigError(f"{key} grid must not be empty")
    out = []
    for value in grid:
        if key == "epsilon":
            vcfg = replace(design.vrbea, lower=replace(design.vrbea.lower, epsilon=float(value)))
        else:
            vcfg = replace(design.vrbea, eta=float(value))
        d = replace(design, estimators=("vrbea",), vrbea=vcfg)
        summary = run_design(d, jobs)
        ok = [r for r in summary.rows if r["status"] == "ok"]
        F = np.array([r["final_F"] for r in ok], dtype=float)
        q = np.array([r["final_q_hat"] for r in ok], dtype=float)
        est = summary.estimates("vrbea")
        for k, srow in enumerate(summary.table):
            x = est[:, k]
            out.append({
                key: float(value),
                "parameter": srow["parameter"],
                "mean": srow["mean"],
                "variance": float(x.var(ddof=1)) if x.size > 1 else 0.0,
                "bias": srow["bias"],
                "se": srow["se"],
                "sign_recovery_pct": srow["sign_recovery_pct"],
                "mean_terminal_F": float(F.mean()) if F.size else float("nan"),
                "mean_terminal_q_hat": float(q.mean()) if q.size else float("nan"),
                "n_ok": len(ok),
            })
    return out


# -- output files ----------------------------------------------------------------

COLUMN_DOCS = {
    "summary.csv": {
        "estimator": "estimator name",
        "parameter": "statistic the parameter multiplies",
        "truth": "data-generating value",
        "bias": "|mean - truth|",
        "mean": "mean estimate over successful replications",
        "median": "median estimate",
        "MAD": "mean absolute deviation from the truth",
        "se": "sample standard deviation of the estimates",
        "q05": "5% empirical quantile",
        "q95": "95% empirical quantile",
        "sign_recovery_pct": "share of estimates with the sign of the truth, in percent",
        "outlier_count": "estimates with absolute value above 1000",
        "trimmed_mean": "mean without outliers",
        "trimmed_bias": "bias without outliers",
        "trimmed_se": "standard deviation without outliers",
        "failed_count": "replications whose estimator failed",
        "n_ok": "replications entering the moments",
        "mean_runtime": "mean wall-clock seconds (only with record_timing)",
    },
    "replications.csv": {
        "replication": "replication index",
        "estimator": "estimator name",
        "status": "ok, nonfinite, or failed: <error>",
        "theta_<k>": "estimate of the k-th parameter",
        "final_F": "VRBEA upper-level value at termination",
        "final_q_hat": "VRBEA value-function surrogate at termination",
        "inner_iterations": "fixed-point estimator: median inner iterations after the first evaluation",
        "runtime": "wall-clock seconds (only with record_timing)",
    },
    "hist_<param>.csv": {
        "estimator": "estimator name",
        "bin_left": "left bin edge",
        "bin_right": "right bin edge",
        "count": "estimates in the bin (outliers excluded)",
    },
    "path_eps.csv": {"epsilon": "regularisation weight", "variance": "sample variance of the estimates",
                     "mean_terminal_F": "mean VRBEA F at termination",
                     "mean_terminal_q_hat": "mean VRBEA q_hat at termination"},
    "path_eta.csv": {"eta": "barrier speed", "variance": "sample variance of the estimates",
                     "mean_terminal_F": "mean VRBEA F at termination",
                     "mean_terminal_q_hat": "mean VRBEA q_hat at termination"},
}


def _cell(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, rows: list[dict], columns: list[str] | None = None) -> None:
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])


def replication_table(design: McDesign, rows: list[dict]) -> tuple[list[str], list[dict]]:
    d = len(design.truth)
    cols = ["replication", "estimator", "status"] + [f"theta_{k + 1}" for k in range(d)] + [
        "final_F", "final_q_hat", "inner_iterations"]
    if design.record_timing:
        cols.append("runtime")
    flat = []
    for r in rows:
        f = {k: v for k, v in r.items() if k != "theta"}
        for k in range(d):
            f[f"theta_{k + 1}"] = r["theta"][k]
        flat.append(f)
    return cols, flat


def histogram_rows(summary: McSummary, k: int) -> list[dict]:
    out = []
    for name in summary.design.estimators:
        x = summary.estimates(name)[:, k]
        x = x[np.isfinite(x) & (np.abs(x) <= OUTLIER_THRESHOLD)]
        if x.size == 0:
            continue
        counts, edges = np.histogram(x, bins=HIST_BINS)
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            out.append({"estimator": name, "bin_left": lo, "bin_right": hi, "count": int(c)})
    return out


def write_manifest(out_dir, command: str, config: dict, files: list[str]) -> Path:
    docs = {f: COLUMN_DOCS.get(f if not f.startswith("hist_") else "hist_<param>.csv", {})
            for f in files}
    manifest = {"command": command, "config": config, "files": sorted(files), "columns": docs}
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def write_mc_outputs(summary: McSummary, out_dir) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    design = summary.design
    files = []
    cols = ["estimator"] + list(COLUMN_DOCS["summary.csv"].keys())[1:]
    if not design.record_timing:
        cols.remove("mean_runtime")
    write_rows(out_dir / "summary.csv", summary.table, cols)
    files.append("summary.csv")
    rcols, flat = replication_table(design, summary.rows)
    write_rows(out_dir / "replications.csv", flat, rcols)
    files.append("replications.csv")
    for k, name in enumerate(design.param_names()):
        fname = f"hist_{name}.csv"
        write_rows(out_dir / fname, histogram_rows(summary, k),
                   ["estimator", "bin_left", "bin_right", "count"])
        files.append(fname)
    return files


def format_table(table: list[dict]) -> str:
    """Plain-text summary in the layout of the usual estimator comparison table."""
    stats = ("bias", "mean", "median", "MAD", "se", "sign_recovery_pct", "outlier_count")
    lines = []
    for name in dict.fromkeys(r["estimator"] for r in table):
        mine = [r for r in table if r["estimator"] == name]
        lines.append(name + "  " + "  ".join(f"{r['parameter']:>12s}" for r in mine))
        for s in stats:
            vals = "  ".join(f"{float(r[s]):12.4f}" for r in mine)
            lines.append(f"  {s:<18s}{vals}")
    return "\n".join(lines)


def default_out_dir() -> Path:
    return Path(os.environ.get("ERGM_BILEVEL_OUT", "runs"))
