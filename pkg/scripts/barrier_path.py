"""Terminal upper-level value and estimates as the barrier speed eta varies."""

import argparse
from dataclasses import replace
from pathlib import Path

from ergm_bilevel.cli import SweepRun
from ergm_bilevel.montecarlo import McDesign, sweep_eta, to_dict, write_manifest, write_rows

COLUMNS = ["eta", "parameter", "mean", "variance", "bias", "se", "sign_recovery_pct",
           "mean_terminal_F", "mean_terminal_q_hat", "n_ok"]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--grid", default="0.2,0.5,1.0")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--R", type=int, default=10)
    p.add_argument("--T", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/eta_path")
    args = p.parse_args()

    grid = [float(x) for x in args.grid.split(",")]
    design = McDesign(n=args.n, R=args.R, seed=args.seed, estimators=("vrbea",))
    design = replace(design, vrbea=replace(design.vrbea, T=args.T))
    rows = sweep_eta(design, grid, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "path_eta.csv", rows, COLUMNS)
    write_manifest(out, "sweep", to_dict(SweepRun("eta", tuple(grid), design)), ["path_eta.csv"])
    by_eta = {r["eta"]: r["mean_terminal_F"] for r in rows}
    for eta, F in by_eta.items():
        print(f"eta={eta:<5g} mean terminal F={F:.6f}")


if __name__ == "__main__":
    main()
