"""Monte Carlo BER sweeps, kernel smoothing, complexity accounting and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import streams
from .channel import (ChannelCovariance, MultiApObservation, ScenarioConfig, TdlChannelSpec,
                      make_observation, sample_scenario)
from .classical import ReceiverChain
from .ldpc import ldpc_decode_bp
from .model import ModelConfig
from .resource_grid import FrameLayout

log = logging.getLogger(__name__)

EBN0_CONVENTION = "Eb/N0 = Es/N0 - 10log10(m * R); pilot overhead not charged; x = configured mean of per-link dB values"
FLOOR_CONVENTION = "zero-error points floored at 1/(2 * bits) before log-domain smoothing"

# a receiver maps an observation batch to fused LLRs (B, capacity)
Receiver = Callable[[MultiApObservation], np.ndarray]


def classical_receiver(chain: ReceiverChain, layout: FrameLayout,
                       cov: ChannelCovariance | None = None) -> Receiver:
    def run(obs: MultiApObservation) -> np.ndarray:
        return chain.llrs(obs.y, obs.sigma2, layout.pilots, layout.constellation, h_true=obs.h, cov=cov)

    return run


def neural_receiver(rx) -> Receiver:
    return rx.infer_llrs


# ---------------------------------------------------------------------------
# curves

@dataclass
class BerCurve:
    receiver: str
    n_ap: int
    pilot_cols: int
    ebn0_db: np.ndarray
    ber: np.ndarray  # mean over seeds
    bits: np.ndarray  # total bits per point, all seeds
    errors: np.ndarray
    per_seed: np.ndarray  # (n_seeds, n_points)
    stderr: np.ndarray  # standard error of the mean BER over iterations
    realized_ebn0_db: np.ndarray
    smoothed: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any((self.ber < 0) | (self.ber > 1)):
            raise ValueError("BER outside [0, 1]")
        if np.any(self.bits <= 0):
            raise ValueError("every BER point needs a positive bit count")

    @property
    def key(self) -> str:
        return f"{self.receiver}_nap{self.n_ap}_p{self.pilot_cols}"

    def ci95(self) -> np.ndarray:
        return 1.96 * self.stderr


def kernel_smooth(ebn0_db, ber, bits, bandwidth_db: float = 1.0, at=None) -> np.ndarray:
    """Nadaraya-Watson smoothing of log10(BER) with a Gaussian kernel in dB.

    Zero-error points are floored at 1 / (2 * bits). Evaluated on the sample
    abscissae unless ``at`` gives other Eb/N0 values.
    """
    x = np.asarray(ebn0_db, dtype=float)
    if x.size == 0:
        raise ValueError("nothing to smooth")
    if bandwidth_db <= 0:
        raise ValueError("bandwidth must be positive")
    ber = np.asarray(ber, dtype=float)
    floor = 1.0 / (2.0 * np.asarray(bits, dtype=float))
    logb = np.log10(np.maximum(ber, floor))
    xe = x if at is None else np.atleast_1d(np.asarray(at, dtype=float))
    dx = (xe[:, None] - x[None, :]) / bandwidth_db
    logw = -0.5 * dx ** 2
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return 10 ** ((w * logb).sum(axis=1) / w.sum(axis=1))


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass
class PointResult:
    errors: np.ndarray  # (iterations,)
    bits: int  # per iteration
    realized: np.ndarray  # realized mean link Eb/N0 per iteration


def _count_errors(llrs: np.ndarray, obs: MultiApObservation, layout: FrameLayout, uncoded: bool) -> int:
    if uncoded:
        hard = (llrs > 0).astype(np.uint8)
        return int((hard != obs.coded_bits).sum())
    b, _ = ldpc_decode_bp(layout.split_codewords(llrs), layout.code)
    return int((b.reshape(obs.info_bits.shape) != obs.info_bits).sum())


def simulate_point(receivers: dict[str, Receiver], layout: FrameLayout, scenario: ScenarioConfig,
                   channel: TdlChannelSpec, ebn0_db: float, iterations: int, frames: int, seed: int,
                   point_key: tuple[int, ...] = (), uncoded: bool = False, zero_noise: bool = False,
                   flat_channel: bool = False) -> dict[str, PointResult]:
    """Every receiver sees the same observations (common random numbers).

    Iteration i draws one placement and ``frames`` independent grids from
    stream (seed, *point_key, i).
    """
    cfg = replace(scenario, ebn0_db=float(ebn0_db))
    errs = {k: np.zeros(iterations, dtype=np.int64) for k in receivers}
    realized = np.zeros(iterations)
    per_iter = frames * (layout.capacity if uncoded else layout.n_info)
    for i in range(iterations):
        rng = streams.stream(seed, streams.SCENARIO, *point_key, i)
        scen = sample_scenario(cfg, rng)
        payload = rng.integers(0, 2, size=(frames, layout.n_info), dtype=np.uint8)
        obs = make_observation(cfg, layout, payload, channel, rng, link_ebn0_db=scen.link_ebn0_db,
                               flat_channel=flat_channel)
        if zero_noise:
            obs.y = obs.h * obs.x[:, None]
            obs.sigma2 = np.full_like(obs.sigma2, 1e-6)
        realized[i] = scen.mean_ebn0_db
        for name, rx in receivers.items():
            llrs = rx(obs)
            if not np.all(np.isfinite(llrs)):
                raise FloatingPointError(
                    f"receiver {name} produced non-finite LLRs (seed {seed}, point {point_key}, iteration {i})")
            errs[name][i] = _count_errors(llrs, obs, layout, uncoded)
    return {k: PointResult(v, per_iter, realized) for k, v in errs.items()}


def run_monte_carlo_ber(receivers: dict[str, Receiver], layout: FrameLayout, scenario: ScenarioConfig,
                        channel: TdlChannelSpec, ebn0_db, n_ap: int, iterations: int, frames: int,
                        seeds, pilot_cols: int, bandwidth_db: float = 1.0, uncoded: bool = False,
                        zero_noise: bool = False, flat_channel: bool = False,
                        meta: dict | None = None) -> list[BerCurve]:
    """BER curves (one per receiver) for one AP count and pilot configuration."""
    ebn0_db = np.asarray(ebn0_db, dtype=float)
    scen = replace(scenario, n_ap=n_ap)
    S, P = len(seeds), len(ebn0_db)
    errors = {k: np.zeros((S, P, iterations), dtype=np.int64) for k in receivers}
    realized = np.zeros((S, P, iterations))
    per_iter = 0
    for si, seed in enumerate(seeds):
        for pi, e in enumerate(ebn0_db):
            res = simulate_point(receivers, layout, scen, channel, e, iterations, frames, seed,
                                 point_key=(n_ap, pilot_cols, pi), uncoded=uncoded,
                                 zero_noise=zero_noise, flat_channel=flat_channel)
            for k, r in res.items():
                errors[k][si, pi] = r.errors
                per_iter = r.bits
                realized[si, pi] = r.realized
            log.info("seed %s n_ap %d Eb/N0 %.1f: %s", seed, n_ap, e,
                     {k: float(errors[k][si, pi].sum()) / (iterations * per_iter) for k in receivers})
    curves = []
    for k in receivers:
        per_seed = errors[k].sum(axis=2) / (iterations * per_iter)
        per_iter_ber = errors[k] / per_iter  # (S, P, I)
        ber = per_seed.mean(axis=0)
        n = S * iterations
        stderr = per_iter_ber.transpose(1, 0, 2).reshape(P, -1).std(axis=1, ddof=1) / math.sqrt(n) if n > 1 \
            else np.zeros(P)
        bits = np.full(P, S * iterations * per_iter)
        curves.append(BerCurve(
            receiver=k, n_ap=n_ap, pilot_cols=pilot_cols, ebn0_db=ebn0_db, ber=ber, bits=bits,
            errors=errors[k].sum(axis=(0, 2)), per_seed=per_seed, stderr=stderr,
            realized_ebn0_db=realized.mean(axis=(0, 2)),
            smoothed=kernel_smooth(ebn0_db, ber, bits, bandwidth_db) if P >= 2 else ber.copy(),
            meta={"seeds": list(seeds), "iterations": iterations, "frames": frames,
                  "uncoded": uncoded, "bandwidth_db": bandwidth_db,
                  "ebn0_convention": EBN0_CONVENTION, "floor_convention": FLOOR_CONVENTION,
                  **(meta or {})}))
    return curves


# ---------------------------------------------------------------------------
# complexity

def estimate_flops(cfg: ModelConfig, n_subcarriers: int, n_symbols: int, n_ap: int) -> dict:
    """Multiply-accumulate counts of one inference pass, by block.

    Counts matmul MACs only (bias adds, norms, softmax and activations are
    ignored). Attention counts both QK^T and the attention-weighted sum.
    """
    T = n_subcarriers * n_symbols
    d, f, h = cfg.d_model, cfg.ffn_dim, cfg.head_hidden
    per_ap = {
        "embedding": T * 3 * d,
        "encoder_projections": cfg.layers * T * 4 * d * d,
        "encoder_attention": cfg.layers * 2 * T * T * d,
        "encoder_ffn": cfg.layers * 2 * T * d * f,
    }
    fusion = 0
    if cfg.fusion:
        fusion = T * (d * d + n_ap * 2 * d * d + 2 * n_ap * d + d * d)
    head = T * (d * h + h * cfg.bits_per_symbol)
    encoder_total = n_ap * sum(per_ap.values())
    total = encoder_total + fusion + head
    return {
        "convention": "MACs of matrix products only; 1 MAC = 2 FLOPs",
        "tokens": T, "n_ap": n_ap,
        "per_ap": per_ap,
        "per_ap_total": sum(per_ap.values()),
        "fusion": fusion, "head": head,
        "total_macs": total,
        "total_gflops": 2 * total / 1e9,
        "reference_gflops": 0.243,
        "reference_note": "published figure for the full model; its counting convention is not stated",
    }


# ---------------------------------------------------------------------------
# CSV / manifest

CSV_FIELDS = ["receiver", "n_ap", "pilot_cols", "ebn0_db", "realized_ebn0_db", "ber", "smoothed_ber",
              "stderr", "errors", "bits", "per_seed_ber", "seeds", "config_hash", "meta"]


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_csv(curves: list[BerCurve], out_dir: str | Path, manifest: dict) -> list[Path]:
    """One CSV per curve plus ``manifest.json``; returns written data files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files = []
    for c in curves:
        path = out / f"ber_{c.key}.csv"
        meta = json.dumps(c.meta, sort_keys=True)
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_FIELDS)
                for i in range(len(c.ebn0_db)):
                    w.writerow([c.receiver, c.n_ap, c.pilot_cols, _fmt(c.ebn0_db[i]), _fmt(c.realized_ebn0_db[i]),
                                _fmt(c.ber[i]), _fmt(c.smoothed[i]), _fmt(c.stderr[i]), int(c.errors[i]),
                                int(c.bits[i]), ";".join(_fmt(v) for v in c.per_seed[:, i]),
                                ";".join(str(s) for s in c.meta.get("seeds", [])),
                                c.meta.get("config_hash", ""), meta])
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        files.append(path)
    man = dict(manifest)
    man["files"] = [p.name for p in files]
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n")
    return files


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def parse_csv(path: str | Path) -> BerCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty curve file")
    meta = json.loads(rows[0]["meta"])
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    per_seed = np.array([[float(v) for v in r["per_seed_ber"].split(";")] for r in rows]).T
    return BerCurve(receiver=rows[0]["receiver"], n_ap=int(rows[0]["n_ap"]), pilot_cols=int(rows[0]["pilot_cols"]),
                    ebn0_db=col("ebn0_db"), ber=col("ber"), bits=col("bits").astype(np.int64),
                    errors=col("errors").astype(np.int64), per_seed=per_seed, stderr=col("stderr"),
                    realized_ebn0_db=col("realized_ebn0_db"), smoothed=col("smoothed_ber"), meta=meta)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=_json_default).encode()).hexdigest()[:16]
