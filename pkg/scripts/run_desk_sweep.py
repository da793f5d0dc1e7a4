"""Desk-scale sweep for one or more hands, then pairwise comparison.

Runs a small grid around the palm origin for each hand, writes per-hand sweep
directories under --out, and compares the per-episode counts of the best cell
of each hand with the signed-rank test.
"""

import argparse
import csv
import os
import sys

from handgrid.cli import main

HANDS = ("isyhand", "isyhand_flat", "allegro_like", "leap_like")


def best_cell_counts(sweep_dir, dest):
    with open(os.path.join(sweep_dir, "summary.csv"), newline="") as fh:
        best = max(csv.DictReader(fh), key=lambda r: float(r["mean_s"]))
    with open(os.path.join(sweep_dir, "cells.csv"), newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if (r["column"], r["row"]) == (best["column"], best["row"])]
    with open(dest, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return dest


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--hands", default=",".join(HANDS))
    ap.add_argument("--grid", default="-0.02:0.02:-0.02:0.02:0.02")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--out", default="runs/desk")
    a = ap.parse_args()

    count_files = []
    for hand in a.hands.split(","):
        out = os.path.join(a.out, hand)
        code = main(["sweep", "--hand", hand, f"--grid={a.grid}", "--seeds", a.seeds,
                     "--epochs", str(a.epochs), "--episodes", str(a.episodes), "--out", out])
        if code != 0:
            sys.exit(code)
        count_files.append(best_cell_counts(out, os.path.join(a.out, f"{hand}_best_cell.csv")))
    if len(count_files) >= 2:
        argv = ["compare"]
        for slot, path in zip("abcdefgh", count_files):
            argv += [f"--{slot}", path]
        argv += ["--out", os.path.join(a.out, "compare.csv"), "--box", os.path.join(a.out, "box.csv")]
        sys.exit(main(argv))
