#!/usr/bin/env python3
"""Run the four fine-tuning combinations end-to-end over several seeds and
print the seed-mean WER table (the directional comparison experiment)."""

import argparse
import csv
import subprocess
import sys
import tempfile
from collections import defaultdict
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/toy.cfg")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("runs/regime-matrix"))
    args = ap.parse_args()

    wers = defaultdict(list)
    for seed in args.seeds:
        work = args.out / f"seed{seed}"
        data = work / "data"
        subprocess.run([sys.executable, "-m", "enhasr.cli", "gen-data",
                        "--config", args.config, "--seed", str(seed),
                        "--out", str(data)], check=True)
        subprocess.run([sys.executable, "-m", "enhasr.cli", "regime-matrix",
                        "--config", args.config, "--seed", str(seed),
                        "--data", str(data), "--out", str(work)], check=True)
        with open(work / "regime-matrix.csv") as f:
            for row in csv.DictReader(f):
                if row["split"] == "test-sim":
                    wers[row["regime"]].append(float(row["wer"]))

    print("\nseed-mean test WER (%):")
    for name in ("no-FT", "FT_ASR", "FT_SE", "FT_SE+ASR"):
        vals = wers[name]
        mean = sum(vals) / len(vals)
        print(f"  {name:10s} {mean:6.2f}   (seeds: {', '.join(f'{v:.2f}' for v in vals)})")


if __name__ == "__main__":
    main()
