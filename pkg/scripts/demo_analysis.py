#!/usr/bin/env python3
"""End-to-end demo: synthesize gait-like data, analyze it, run diagnostics.

Writes a two-stratum CSV, runs the analyze pipeline at a strict level, then
the model-mode correlation diagnostics, into --out.
"""

import argparse
import os
import sys

import numpy as np

from smoothdiff.cli import main as cli_main


def synth_gait(path, n=4000, seed=1):
    rng = np.random.default_rng(seed)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("y,z,stratum\n")
        for label in ("1", "2"):
            z = rng.uniform(0, 100, n)
            # two force peaks with a valley near mid-stance
            curve = 9.0 * np.exp(-0.5 * ((z - 25) / 9) ** 2) + 9.5 * np.exp(
                -0.5 * ((z - 72) / 9) ** 2
            )
            if label == "2":
                curve = curve + 1.4 * np.exp(-0.5 * ((z - 50) / 10) ** 2)
            y = curve + rng.normal(0, 0.6, n)
            for yi, zi in zip(y, z):
                fh.write(f"{float(yi)!r},{float(zi)!r},{label}\n")


def run(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--basis-dim", type=int, default=80)
    args = parser.parse_args(argv)

    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "gait_like.csv")
    synth_gait(data_path, seed=args.seed)
    print(f"wrote {data_path}")

    rc = cli_main(
        [
            "analyze",
            "--data", data_path,
            "--basis-dim", str(args.basis_dim),
            "--degree", "3",
            "--domain", "0", "100",
            "--alpha", "0.01",
            "--tdp", "0.9", "0.7", "0.5",
            "--out", args.out,
        ]
    )
    if rc != 0:
        return rc
    return cli_main(
        [
            "diagnose",
            "--model", os.path.join(args.out, "fits.json"),
            "--max-lag", "10",
            "--out", args.out,
        ]
    )


if __name__ == "__main__":
    sys.exit(run())
