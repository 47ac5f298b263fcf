"""Generator-loss curves h(d), h'(d) and the gradient values at d = -5.

Usage: python3 scripts/loss_curves.py [--out out/losses.csv]
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from monoflow.cli import loss_curves


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("out/losses.csv"))
    ap.add_argument("--shifts", type=float, nargs="+", default=[0.0, 1.0, 3.0, 5.0])
    args = ap.parse_args()
    header, table = loss_curves(-10.0, 10.0, 401, args.shifts)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(table.tolist())
    i = int(np.argmin(np.abs(table[:, 0] + 5.0)))
    for j, name in enumerate(header):
        if name.startswith("dh_"):
            print(f"{name[3:]:<22} h'(-5) = {table[i, j]:.4g}")


if __name__ == "__main__":
    main()
