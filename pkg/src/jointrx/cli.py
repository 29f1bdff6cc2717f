"""Command line entry point: ``jointrx {train,evaluate,sweep,flops,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .bench import estimate_flops, parse_csv
from .config import PROFILES, load_profile
from .harness import run_sweep, run_training_job
from .model import count_params


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, _, raw = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        out[key] = yaml.safe_load(raw)
    return out


def _profile(args):
    over = _overrides(args.set)
    if args.seed is not None:
        over.setdefault("train.seed", args.seed)
    return load_profile(args.profile, args.config, over)


def cmd_train(args) -> int:
    prof = _profile(args)
    ckpt = run_training_job(prof, args.out, pilot_cols=args.pilot_cols, n_ap=args.n_ap, seed=args.seed,
                            steps=args.steps, resume=args.resume)
    print(ckpt)
    return 0


def _print_curves(curves) -> None:
    for c in curves:
        print(f"# {c.receiver} N_R={c.n_ap} pilots={c.pilot_cols}")
        for e, b, s, ci in zip(c.ebn0_db, c.ber, c.smoothed, c.ci95()):
            print(f"  {e:6.1f} dB  BER {b:.3e}  smoothed {s:.3e}  +-{ci:.1e}")


def cmd_sweep(args) -> int:
    prof = _profile(args)
    receivers = [args.receiver] if args.receiver else None
    n_aps = [args.n_ap] if args.n_ap else None
    seeds = [args.seed] if args.seed is not None else None
    curves = run_sweep(prof, args.out, receivers=receivers, n_aps=n_aps, pilot_cols=args.pilot_cols,
                       checkpoint=args.checkpoint, seeds=seeds)
    _print_curves(curves)
    return 0


def cmd_evaluate(args) -> int:
    if not args.receiver:
        raise SystemExit("evaluate needs --receiver")
    return cmd_sweep(args)


def cmd_flops(args) -> int:
    prof = _profile(args)
    cfg = prof.model_config(args.pilot_cols)
    rep = estimate_flops(cfg, prof.grid.n_subcarriers, prof.grid.n_symbols, args.n_ap or max(prof.sweep.n_ap))
    rep["parameters"] = count_params(cfg)
    text = json.dumps(rep, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "flops.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    files = sorted(Path(args.out).glob("ber_*.csv"))
    if not files:
        print(f"no curve files in {args.out}")
        return 1
    _print_curves([parse_csv(f) for f in files])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointrx", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in [("train", cmd_train), ("evaluate", cmd_evaluate), ("sweep", cmd_sweep),
                     ("flops", cmd_flops), ("report", cmd_report)]:
        s = sub.add_parser(name)
        s.set_defaults(func=fn)
        s.add_argument("--config", help="YAML file overriding the profile")
        s.add_argument("--profile", choices=sorted(PROFILES), default="micro")
        s.add_argument("--seed", type=int)
        s.add_argument("--receiver", choices=["transformer", "perfect", "lmmse", "ls"])
        s.add_argument("--n-ap", type=int)
        s.add_argument("--pilot-cols", type=int, choices=[1, 2])
        s.add_argument("--out", default="runs/latest")
        s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a profile field, e.g. --set sweep.iterations=50")
        s.add_argument("--checkpoint", help="neural checkpoint; may contain {n_ap} and {pilot_cols}")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            s.add_argument("--steps", type=int)
            s.add_argument("--resume", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
