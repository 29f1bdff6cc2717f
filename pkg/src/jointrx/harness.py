"""Profile-level jobs: training runs and BER sweeps with manifests."""

from __future__ import annotations

import json
import logging
import platform
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (BerCurve, classical_receiver, emit_csv, neural_receiver,
                    run_monte_carlo_ber)
from .channel import cached_covariance
from .classical import ReceiverChain
from .config import Profile
from .model import NeuralReceiver, count_params
from .training import Trainer

log = logging.getLogger(__name__)

CLASSICAL = ("perfect", "lmmse", "ls")


def _manifest(profile: Profile, kind: str, **extra) -> dict:
    return {"kind": kind, "package_version": __version__, "profile": profile.to_dict(),
            "config_hash": profile.digest(), "numpy": np.__version__,
            "python": platform.python_version(), **extra}


def run_training_job(profile: Profile, out_dir: str | Path, pilot_cols: int | None = None,
                     n_ap: int | None = None, seed: int | None = None, steps: int | None = None,
                     resume: bool = False) -> Path:
    """Train one neural receiver; writes ``model.ckpt``, ``train_log.csv`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = pilot_cols or profile.sweep.pilot_cols
    tcfg = profile.train
    if n_ap is not None:
        tcfg = replace(tcfg, n_ap=n_ap)
    if seed is not None:
        tcfg = replace(tcfg, seed=seed)
    if steps is not None:
        tcfg = replace(tcfg, steps=steps)
    model_cfg = replace(profile.model_config(cols), max_aps=max(profile.model.max_aps, tcfg.n_ap))
    layout = profile.layout(cols)
    ckpt = out / "model.ckpt"
    if resume and ckpt.exists():
        trainer = Trainer.resume(ckpt, layout, profile.scenario, profile.channel, tcfg)
    else:
        trainer = Trainer.fresh(model_cfg, layout, profile.scenario, profile.channel, tcfg)
    trainer.run(log_path=out / "train_log.csv", checkpoint_path=ckpt)
    man = _manifest(profile, "train", pilot_cols=cols, n_ap=tcfg.n_ap, seed=tcfg.seed, steps=trainer.step,
                    parameters=count_params(model_cfg), model=json.loads(model_cfg.to_json()),
                    final_val_rate=next((h["val_rate"] for h in reversed(trainer.history) if h["val_rate"] != ""), None))
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return ckpt


def build_receivers(profile: Profile, names, pilot_cols: int, n_ap: int,
                    checkpoint: str | Path | None = None, cov_cache: str | Path | None = None,
                    equalizer: str | None = None, fusion: str | None = None) -> dict:
    layout = profile.layout(pilot_cols)
    sweep = profile.sweep
    eq = equalizer or sweep.equalizer
    fu = fusion or sweep.fusion
    receivers = {}
    for name in names:
        if name in CLASSICAL:
            cov = None
            if name == "lmmse":
                n = sweep.covariance_samples or 20 * layout.pilots.n_pilots
                cov = cached_covariance(profile.channel, layout.pilots, n, seed=0, cache_dir=cov_cache)
            receivers[name] = classical_receiver(ReceiverChain(name, eq, fu), layout, cov)
        elif name == "transformer":
            if checkpoint is None:
                raise FileNotFoundError("the transformer receiver needs --checkpoint")
            path = Path(str(checkpoint).format(n_ap=n_ap, pilot_cols=pilot_cols))
            if not path.exists():
                raise FileNotFoundError(f"missing checkpoint {path}")
            rx, meta, _ = NeuralReceiver.load(path)
            if list(rx.mask.pilot_cols) != list(layout.pilots.pilot_cols):
                raise ValueError(f"checkpoint {path} was trained for pilot columns {list(rx.mask.pilot_cols)}")
            receivers[name] = neural_receiver(rx)
        else:
            raise ValueError(f"unknown receiver {name!r}")
    return receivers


def run_sweep(profile: Profile, out_dir: str | Path, receivers=None, n_aps=None, pilot_cols: int | None = None,
              checkpoint: str | Path | None = None, seeds=None) -> list[BerCurve]:
    sweep = profile.sweep
    receivers = tuple(receivers or sweep.receivers)
    n_aps = tuple(n_aps or sweep.n_ap)
    cols = pilot_cols or sweep.pilot_cols
    seeds = tuple(seeds if seeds is not None else sweep.seeds)
    layout = profile.layout(cols)
    out = Path(out_dir)
    curves: list[BerCurve] = []
    chash = profile.digest()
    for n_ap in n_aps:
        rx = build_receivers(profile, receivers, cols, n_ap, checkpoint, cov_cache=out / "cache")
        meta = {"config_hash": chash, "equalizer": sweep.equalizer, "fusion": sweep.fusion,
                "profile": profile.name, "code": layout.code.name}
        curves += run_monte_carlo_ber(rx, layout, profile.scenario, profile.channel, sweep.ebn0_db, n_ap,
                                      sweep.iterations, sweep.frames, seeds, cols, sweep.bandwidth_db,
                                      uncoded=sweep.uncoded, zero_noise=sweep.zero_noise,
                                      flat_channel=sweep.flat_channel, meta=meta)
    emit_csv(curves, out, _manifest(profile, "sweep", receivers=list(receivers), n_ap=list(n_aps),
                                    pilot_cols=cols, seeds=list(seeds),
                                    checkpoint=None if checkpoint is None else str(checkpoint)))
    return curves
