import argparse
import sys
from pathlib import Path

from dmaisac.cli import main

RESULTS = Path(__file__).resolve().parent.parent / "results"


def run(experiment, extra, description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--tier", choices=("reduced", "full"), default="reduced")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(RESULTS / experiment))
    args, rest = ap.parse_known_args()
    argv = [experiment, "--tier", args.tier, "--seed", str(args.seed), "--out", args.out] + extra + rest
    print("dmaisac " + " ".join(argv))
    sys.exit(main(argv))
