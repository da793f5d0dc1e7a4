"""Write every builtin hand spec as JSON into a directory (default: ./models)."""

import argparse
import sys

from handgrid.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="models")
    args = ap.parse_args()
    sys.exit(main(["model", "export", "all", "--out", args.out]))
