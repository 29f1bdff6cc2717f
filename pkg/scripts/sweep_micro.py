#!/usr/bin/env python3
"""BER sweep on the micro profile against checkpoints from train_micro.py.

    python scripts/sweep_micro.py --models runs/micro --out runs/micro/sweep

For each AP count the transformer checkpoint trained for that count is used
(``r{n_ap}p{pilot_cols}``). One CSV per receiver and AP count, plus a
manifest, lands in ``--out/p{pilot_cols}``.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from jointrx.config import PROFILES
from jointrx.harness import run_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", default="runs/micro")
    ap.add_argument("--out", default="runs/micro/sweep")
    ap.add_argument("--pilot-cols", type=int, choices=[1, 2], default=2)
    ap.add_argument("--iterations", type=int)
    ap.add_argument("--no-transformer", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    prof = PROFILES["micro"]
    if args.iterations:
        prof = replace(prof, sweep=replace(prof.sweep, iterations=args.iterations))
    receivers = [r for r in prof.sweep.receivers if not (args.no_transformer and r == "transformer")]
    n_aps = prof.sweep.n_ap if args.pilot_cols == 2 else (1,)
    ckpt = str(Path(args.models) / "r{n_ap}p{pilot_cols}" / "model.ckpt")
    for n_ap in n_aps:
        curves = run_sweep(prof, Path(args.out) / f"p{args.pilot_cols}" / f"nap{n_ap}", receivers=receivers,
                           n_aps=[n_ap], pilot_cols=args.pilot_cols, checkpoint=ckpt)
        for c in curves:
            print(c.key, " ".join(f"{b:.2e}" for b in c.ber))


if __name__ == "__main__":
    main()
