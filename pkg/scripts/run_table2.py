"""Run the 6 x 3 generator-training sweep and print the converged grid.

Usage: python3 scripts/run_table2.py [--seeds 0 1 2] [--out DIR]

With several seeds the script also reports how many seeds reproduce each cell.
"""
import argparse
from pathlib import Path

from monoflow.cli import format_grid, run_table2, table2_mismatches, thread_count
from monoflow.config import default_config
from monoflow.generator import DIVERGENCES, RATIO_MODELS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", type=Path, default=Path("out/table2_seeds"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    agree = {(d, m): 0 for d in DIVERGENCES for m in RATIO_MODELS}
    for seed in args.seeds:
        doc = default_config()
        doc["seed"] = seed
        results = run_table2(doc, thread_count())
        grid = format_grid(results)
        (args.out / f"grid_seed{seed}.txt").write_text(grid, encoding="utf-8")
        wrong = table2_mismatches(results)
        print(f"seed {seed}: {'matches' if not wrong else 'mismatch'}")
        print(grid)
        bad = {tuple(line.split(":")[0].split("/")) for line in wrong}
        for key in agree:
            agree[key] += key not in bad
    if len(args.seeds) > 1:
        print(f"cells reproduced out of {len(args.seeds)} seeds")
        for d in DIVERGENCES:
            print(d.ljust(15) + "".join(str(agree[(d, m)]).ljust(12) for m in RATIO_MODELS))


if __name__ == "__main__":
    main()
