#!/usr/bin/env python3
"""Train the three micro-profile receivers used by the learning checks.

    python scripts/train_micro.py --out runs/micro [--steps 2000]

Writes one directory per model (checkpoint, training log, manifest).
"""

import argparse
import logging
from pathlib import Path

from jointrx.config import PROFILES
from jointrx.harness import run_training_job

MODELS = {"r1p2": (1, 2), "r1p1": (1, 1), "r2p2": (2, 2)}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/micro")
    ap.add_argument("--steps", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", choices=sorted(MODELS), action="append")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for key in args.only or MODELS:
        n_ap, cols = MODELS[key]
        ckpt = run_training_job(PROFILES["micro"], Path(args.out) / key, pilot_cols=cols, n_ap=n_ap,
                                seed=args.seed, steps=args.steps)
        print(f"{key}: {ckpt}")


if __name__ == "__main__":
    main()
