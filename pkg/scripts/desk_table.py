"""Estimator comparison at desk scale: VRBEA, fixed point, MPLE and MCMC-MLE.

    python scripts/desk_table.py --n 50 --R 50 --T 20000 --out runs/desk
"""

import argparse
from dataclasses import replace
from pathlib import Path

from ergm_bilevel.montecarlo import McDesign, format_table, run_design, write_manifest, write_mc_outputs


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--R", type=int, default=50)
    p.add_argument("--T", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--perturb", type=float, default=0.0, help="start at truth + U[-c, c]")
    p.add_argument("--out", default="runs/desk")
    args = p.parse_args()

    design = McDesign(n=args.n, R=args.R, seed=args.seed,
                      init_mode="perturbed" if args.perturb else "truth", perturb_c=args.perturb)
    design = replace(design, vrbea=replace(design.vrbea, T=args.T))
    summary = run_design(design, jobs=args.jobs)
    out = Path(args.out)
    files = write_mc_outputs(summary, out)
    write_manifest(out, "mc", design.to_dict(), files)
    print(format_table(summary.table))


if __name__ == "__main__":
    main()
