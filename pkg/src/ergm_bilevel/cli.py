"""Command-line interface.

    ergm-bilevel sample   --n 50 --theta -1,1 --count 10 --seed 7
    ergm-bilevel estimate --method vrbea --graph g.csv --theta0 -1,1 --T 20000 --alpha auto
    ergm-bilevel mc       --config design.yaml --jobs 4
    ergm-bilevel sweep    --config design.yaml --param eta --grid 0.2,0.5,1.0
    ergm-bilevel exact    --n 4 --theta -1,1

Config files are JSON or YAML (YAML 1.1 reads ``1e-6`` as a string, so
write ``1.0e-6`` there).  Every command that writes files also writes
``manifest.json`` holding the fully resolved configuration; passing that
manifest back with ``--config`` reproduces the outputs.  Exit codes: 0 success, 2 usage or configuration
error, 3 numeric failure.  The default output directory is taken from
``ERGM_BILEVEL_OUT`` (else ``runs``).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import montecarlo as mc
from .baselines import McmcMleConfig, MpleConfig, MzConfig, mcmc_mle_estimate, mple_estimate, mz_estimate
from .bilevel import OuterConfig, vrbea_estimate
from .exact import ExactModel
from .graph_stats import EDGE_TRIANGLE, ConfigError, NumericError, Theta, as_spec, read_graph, write_edgelist_csv
from .meanfield import scaled_inner_step
from .sampler import SamplerConfig, degeneracy_report, metropolis_sample, write_packed

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def load_config(path) -> tuple[str | None, dict]:
    """Read a YAML/JSON config; a manifest yields its command and resolved config."""
    try:
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            data = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    if "command" in data and "config" in data:
        return data["command"], data["config"]
    return None, data


def _config_for(args, command: str) -> dict:
    if not args.config:
        return {}
    cmd, data = load_config(args.config)
    if cmd is not None and cmd != command:
        raise ConfigError(f"manifest was written by '{cmd}', not '{command}'")
    return data


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else mc.default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- sample --------------------------------------------------------------------

@dataclass
class SampleRun:
    n: int | None = None
    theta: tuple = ()
    spec: tuple = EDGE_TRIANGLE
    format: str = "edgelist"
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.n is None:
            raise ConfigError("--n is required")
        if self.format not in ("edgelist", "packed"):
            raise ConfigError("format must be 'edgelist' or 'packed'")
        self.theta = tuple(float(x) for x in self.theta)
        self.spec = tuple(self.spec)
        Theta(self.theta, as_spec(self.spec))


mc._NESTED_OF[SampleRun] = {"sampler": SamplerConfig}


def cmd_sample(args) -> int:
    data = _config_for(args, "sample")
    for key in ("n", "format"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.theta is not None:
        data["theta"] = list(parse_floats(args.theta))
    if args.spec is not None:
        data["spec"] = list(as_spec(args.spec).kinds)
    sampler = dict(data.get("sampler", {}))
    for key in ("count", "seed", "burn_in", "thinning", "init_p"):
        if getattr(args, key) is not None:
            sampler[key] = getattr(args, key)
    data["sampler"] = sampler
    run = mc.from_dict(SampleRun, data)
    samples = metropolis_sample(run.theta, run.sampler, run.spec, n=run.n)
    out = _out_dir(args)
    files = []
    if run.format == "packed":
        write_packed(samples, out / "samples.txt")
        files.append("samples.txt")
    else:
        width = max(3, len(str(len(samples) - 1)))
        for k, g in enumerate(samples):
            name = f"sample_{k:0{width}d}.csv"
            write_edgelist_csv(g, out / name)
            files.append(name)
    resolved = mc.to_dict(run)
    resolved["sampler"] = mc.to_dict(samples.config)
    mc.write_manifest(out, "sample", resolved, files)
    if len(samples):
        rep = degeneracy_report(samples)
        print(f"{len(samples)} samples, mean density {rep['mean_density']:.4f}, "
              f"extreme fraction {rep['extreme_fraction']:.3f}")
    return EXIT_OK


# -- estimate ------------------------------------------------------------------

METHODS = ("vrbea", "mz", "mple", "mcmc_mle", "exact")


@dataclass
class EstimateRun:
    method: str = "vrbea"
    graph: str | None = None
    n: int | None = None
    spec: tuple = EDGE_TRIANGLE
    theta0: tuple = (-1.0, 1.0)
    alpha_auto: bool = False
    vrbea: OuterConfig = field(default_factory=OuterConfig)
    mz: MzConfig = field(default_factory=MzConfig)
    mple: MpleConfig = field(default_factory=MpleConfig)
    mcmc_mle: McmcMleConfig = field(default_factory=McmcMleConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "exact":
            if self.n is None:
                raise ConfigError("--method exact needs --n")
        elif self.graph is None:
            raise ConfigError("--graph is required")
        self.spec = tuple(self.spec)
        self.theta0 = tuple(float(x) for x in self.theta0)
        Theta(self.theta0, as_spec(self.spec))


mc._NESTED_OF[EstimateRun] = {"vrbea": OuterConfig, "mz": MzConfig, "mple": MpleConfig,
                              "mcmc_mle": McmcMleConfig}


def _estimate_run(args) -> EstimateRun:
    data = _config_for(args, "estimate")
    for key in ("method", "n"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.graph is not None:
        data["graph"] = str(Path(args.graph).resolve())
    if args.spec is not None:
        data["spec"] = list(as_spec(args.spec).kinds)
    if args.theta0 is not None:
        data["theta0"] = list(parse_floats(args.theta0))
    vr = dict(data.get("vrbea", {}))
    lower = dict(vr.get("lower", {}))
    for flag, key in (("xi", "xi"), ("eta", "eta"), ("T", "T"), ("seed", "seed"), ("schedule", "schedule")):
        if getattr(args, flag) is not None:
            vr[key] = getattr(args, flag)
    for flag, key in (("eps", "epsilon"), ("K", "K"), ("zeta", "zeta")):
        if getattr(args, flag) is not None:
            lower[key] = getattr(args, flag)
    if args.alpha is not None:
        if args.alpha == "auto":
            data["alpha_auto"] = True
        else:
            try:
                lower["alpha"] = float(args.alpha)
            except ValueError as exc:
                raise ConfigError("--alpha must be a number or 'auto'") from exc
            data["alpha_auto"] = False
    if lower:
        vr["lower"] = lower
    if vr:
        data["vrbea"] = vr
    if args.seed is not None:
        for key in ("mz", "mcmc_mle"):
            data[key] = {**data.get(key, {}), "seed": args.seed}
    return mc.from_dict(EstimateRun, data)


def cmd_estimate(args) -> int:
    run = _estimate_run(args)
    spec = as_spec(run.spec)
    if run.method == "exact":
        model = ExactModel.build(run.theta0, run.n, spec)
        print(json.dumps({"n": run.n, "theta": list(run.theta0), "psi": model.psi,
                          "mean_stats": model.mean_stats().tolist()}))
        return EXIT_OK
    try:
        g = read_graph(run.graph)
    except OSError as exc:
        raise ConfigError(f"cannot read graph {run.graph}: {exc}") from exc
    resolved_vrbea = run.vrbea
    if run.alpha_auto:
        resolved_vrbea = replace(run.vrbea, lower=replace(run.vrbea.lower, alpha=scaled_inner_step(g.n)))
    if run.method == "vrbea":
        res = vrbea_estimate(g, resolved_vrbea, spec, theta0=run.theta0)
    elif run.method == "mz":
        res = mz_estimate(g, run.mz, theta0=run.theta0)
    elif run.method == "mple":
        res = mple_estimate(g, run.mple, spec)
    else:
        res = mcmc_mle_estimate(g, run.mcmc_mle, spec, theta0=run.theta0)
    out = _out_dir(args)
    files = ["result.json"]
    (out / "result.json").write_text(json.dumps(res.to_json_dict(), indent=2, sort_keys=True,
                                                default=_json_default) + "\n")
    if res.trace is not None:
        res.trace.to_csv(out / "trace.csv")
        files.append("trace.csv")
    resolved = mc.to_dict(run)
    resolved["vrbea"] = mc.to_dict(resolved_vrbea)
    resolved["alpha_auto"] = False
    mc.write_manifest(out, "estimate", resolved, files)
    print(" ".join(f"{k}={v:.6f}" for k, v in zip(spec.kinds, res.theta_hat.values)))
    if res.flags.get("nonfinite"):
        print("numeric failure: partial trace written", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


# -- mc / sweep ----------------------------------------------------------------

def _design(args, data: dict) -> mc.McDesign:
    data = dict(data)
    for key in ("n", "R", "seed"):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    if getattr(args, "estimators", None) is not None:
        data["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if getattr(args, "T", None) is not None:
        data["vrbea"] = {**data.get("vrbea", {}), "T": args.T}
    return mc.from_dict(mc.McDesign, data)


def cmd_mc(args) -> int:
    design = _design(args, _config_for(args, "mc"))
    summary = mc.run_design(design, jobs=args.jobs)
    out = _out_dir(args)
    files = mc.write_mc_outputs(summary, out)
    mc.write_manifest(out, "mc", design.to_dict(), files)
    print(mc.format_table(summary.table))
    return EXIT_OK


@dataclass
class SweepRun:
    param: str = "eps"
    grid: tuple = (0.0, 1e-4, 1e-2, 1.0)
    design: mc.McDesign = field(default_factory=mc.McDesign)

    def __post_init__(self):
        if self.param not in ("eps", "eta"):
            raise ConfigError("--param must be 'eps' or 'eta'")
        self.grid = tuple(float(x) for x in self.grid)
        if not self.grid:
            raise ConfigError("sweep grid must not be empty")


mc._NESTED_OF[SweepRun] = {"design": mc.McDesign}


def cmd_sweep(args) -> int:
    data = _config_for(args, "sweep")
    if "design" not in data and data:
        # plain design file: sweep options may sit at the top level
        data = {"design": {k: v for k, v in data.items() if k not in ("param", "grid")},
                **{k: data[k] for k in ("param", "grid") if k in data}}
    if args.param is not None:
        data["param"] = args.param
    if args.grid is not None:
        data["grid"] = list(parse_floats(args.grid))
    data["design"] = mc.to_dict(_design(args, data.get("design", {})))
    run = mc.from_dict(SweepRun, data)
    if run.param == "eps":
        rows = mc.sweep_regularization(run.design, run.grid, jobs=args.jobs)
        fname, key = "path_eps.csv", "epsilon"
    else:
        rows = mc.sweep_eta(run.design, run.grid, jobs=args.jobs)
        fname, key = "path_eta.csv", "eta"
    out = _out_dir(args)
    cols = [key, "parameter", "mean", "variance", "bias", "se", "sign_recovery_pct",
            "mean_terminal_F", "mean_terminal_q_hat", "n_ok"]
    mc.write_rows(out / fname, rows, cols)
    mc.write_manifest(out, "sweep", mc.to_dict(run), [fname])
    for r in rows:
        print(f"{key}={r[key]:<10g} {r['parameter']:<10s} mean={r['mean']:.4f} "
              f"var={r['variance']:.3g} F={r['mean_terminal_F']:.6f}")
    return EXIT_OK


# -- exact ---------------------------------------------------------------------

def cmd_exact(args) -> int:
    if args.n is None or args.theta is None:
        raise ConfigError("exact needs --n and --theta")
    spec = as_spec(args.spec or EDGE_TRIANGLE)
    model = ExactModel.build(parse_floats(args.theta), args.n, spec)
    print(json.dumps({"n": args.n, "spec": list(spec.kinds), "psi": model.psi,
                      "log_partition": model.log_z, "mean_stats": model.mean_stats().tolist()}))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ergm-bilevel", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw networks with the Metropolis sampler")
    s.add_argument("--config")
    s.add_argument("--n", type=int)
    s.add_argument("--theta")
    s.add_argument("--spec")
    s.add_argument("--count", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--burn-in", dest="burn_in", type=int)
    s.add_argument("--thinning", type=int)
    s.add_argument("--init-p", dest="init_p", type=float)
    s.add_argument("--format", choices=("edgelist", "packed"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("estimate", help="estimate theta on one observed network")
    e.add_argument("--config")
    e.add_argument("--method", choices=METHODS)
    e.add_argument("--graph")
    e.add_argument("--n", type=int, help="node count for --method exact")
    e.add_argument("--spec")
    e.add_argument("--theta0", "--theta", dest="theta0")
    e.add_argument("--eps", type=float)
    e.add_argument("--eta", type=float)
    e.add_argument("--xi", type=float)
    e.add_argument("--K", type=int)
    e.add_argument("--T", type=int)
    e.add_argument("--zeta", type=float)
    e.add_argument("--alpha", help="inner step size, or 'auto' for 0.002 * n^2")
    e.add_argument("--schedule", choices=("constant", "inv_sqrt_T"))
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    for name, func, help_text in (("mc", cmd_mc, "run a Monte Carlo design"),
                                  ("sweep", cmd_sweep, "sweep epsilon or eta over a design")):
        m = sub.add_parser(name, help=help_text)
        m.add_argument("--config")
        m.add_argument("--n", type=int)
        m.add_argument("--R", type=int)
        m.add_argument("--T", type=int)
        m.add_argument("--seed", type=int)
        m.add_argument("--estimators")
        m.add_argument("--jobs", type=int, default=1)
        m.add_argument("--out")
        if name == "sweep":
            m.add_argument("--param", choices=("eps", "eta"))
            m.add_argument("--grid")
        m.set_defaults(func=func)

    x = sub.add_parser("exact", help="exact log-partition by enumeration (n <= 6)")
    x.add_argument("--n", type=int)
    x.add_argument("--theta")
    x.add_argument("--spec")
    x.set_defaults(func=cmd_exact)
    return p


LIST_OPTIONS = ("--theta", "--theta0", "--grid")


def _join_negative_lists(argv: list[str]) -> list[str]:
    # argparse takes "-1,1" for an option flag; glue such values to their option
    out, k = [], 0
    while k < len(argv):
        tok = argv[k]
        if tok in LIST_OPTIONS and k + 1 < len(argv) and argv[k + 1][:1] == "-" \
                and argv[k + 1][1:2] in "0123456789.":
            out.append(f"{tok}={argv[k + 1]}")
            k += 2
        else:
            out.append(tok)
            k += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_negative_lists(argv))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
