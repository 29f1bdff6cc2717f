"""Training loop for the neural receiver: on-the-fly data, Adam, CSV logging,
resumable checkpoints."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import streams
from .channel import (MultiApObservation, ScenarioConfig, TdlChannelSpec, ebn0_to_noise_var,
                      make_observation, sample_scenario)
from .model import ModelConfig, NeuralReceiver, bmd_loss, bmd_rate, data_token_index, forward, tokenize
from .resource_grid import FrameLayout

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    ebn0_range: tuple[float, float] = (0.0, 15.0)
    n_ap: int = 1
    ap_dropout: float = 0.0
    val_every: int = 100
    val_frames: int = 64
    flat_channel: bool = False


def noise_samples_for_range(ebn0_range, bits_per_symbol: int, code_rate: float, n: int = 1001) -> np.ndarray:
    """Noise variances on a uniform dB grid over the training Eb/N0 range."""
    grid = np.linspace(ebn0_range[0], ebn0_range[1], n)
    return ebn0_to_noise_var(grid, bits_per_symbol, code_rate)


def sample_batch(layout: FrameLayout, scenario: ScenarioConfig, channel: TdlChannelSpec,
                 tcfg: TrainConfig, rng: np.random.Generator, n_frames: int) -> MultiApObservation:
    """Independent topology and target Eb/N0 (uniform in dB) for every frame."""
    links = []
    for _ in range(n_frames):
        target = rng.uniform(*tcfg.ebn0_range)
        links.append(sample_scenario(replace(scenario, n_ap=tcfg.n_ap, ebn0_db=target), rng).link_ebn0_db)
    payload = rng.integers(0, 2, size=(n_frames, layout.n_info), dtype=np.uint8)
    cfg = replace(scenario, n_ap=tcfg.n_ap)
    return make_observation(cfg, layout, payload, channel, rng, link_ebn0_db=np.stack(links),
                            flat_channel=tcfg.flat_channel)


def _drop_aps(obs: MultiApObservation, p: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Zero out non-anchor AP inputs with probability p (robustness toggle)."""
    y, s2 = obs.y.copy(), obs.sigma2.copy()
    if p > 0 and obs.n_ap > 1:
        drop = rng.random(s2.shape) < p
        drop[:, 0] = False
        y[drop] = 0.0
        s2[drop] = s2.max()
    return y, s2


def compute_loss(rx: NeuralReceiver, y, sigma2, coded_bits) -> tuple[ad.Tensor, ad.Tensor]:
    u = tokenize(y, sigma2, rx.cfg)
    logits = forward(rx.params, u, rx.cfg, rx.posenc)
    idx = data_token_index(rx.mask)
    llr = logits[:, idx, :]
    return bmd_loss(llr, coded_bits)


def train_step(rx: NeuralReceiver, state: ad.AdamState, y, sigma2, coded_bits,
               clip_norm: float = 1.0, step_info: str = "") -> dict:
    """One forward/backward/Adam update. Mutates ``rx.params`` and ``state``."""
    names = list(rx.params)
    for p in rx.params.values():
        p.zero_grad()
    loss, rate = compute_loss(rx, y, sigma2, coded_bits)
    if not np.isfinite(loss.data):
        raise TrainingDiverged(f"non-finite loss {loss.data} {step_info}")
    ad.backward(loss)
    grads = [rx.params[n].grad for n in names]
    gnorm = ad.clip_grad_norm(grads, clip_norm)
    ad.adam_step([rx.params[n] for n in names], grads, state)
    return {"loss": float(loss.data), "rate": float(rate.data), "grad_norm": gnorm}


def adam_to_tensors(names: list[str], state: ad.AdamState) -> dict[str, np.ndarray]:
    out = {}
    for n, m, v in zip(names, state.m, state.v):
        out[f"adam.m.{n}"] = m
        out[f"adam.v.{n}"] = v
    return out


def adam_from_tensors(names: list[str], tensors: dict[str, np.ndarray], hyper: dict) -> ad.AdamState:
    return ad.AdamState(lr=hyper["lr"], beta1=hyper["beta1"], beta2=hyper["beta2"], eps=hyper["eps"],
                        step=hyper["step"],
                        m=[tensors[f"adam.m.{n}"].astype(np.float32) for n in names],
                        v=[tensors[f"adam.v.{n}"].astype(np.float32) for n in names])


@dataclass
class Trainer:
    rx: NeuralReceiver
    layout: FrameLayout
    scenario: ScenarioConfig
    channel: TdlChannelSpec
    tcfg: TrainConfig
    state: ad.AdamState = None
    step: int = 0
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.state is None:
            self.state = ad.AdamState.for_params(self.rx.params.values(), lr=self.tcfg.lr,
                                                 beta1=self.tcfg.beta1, beta2=self.tcfg.beta2,
                                                 eps=self.tcfg.eps)

    @classmethod
    def fresh(cls, model_cfg: ModelConfig, layout: FrameLayout, scenario: ScenarioConfig,
              channel: TdlChannelSpec, tcfg: TrainConfig) -> "Trainer":
        rng = streams.stream(tcfg.seed, streams.INIT)
        rx = NeuralReceiver.initialise(model_cfg, layout.pilots, rng)
        return cls(rx, layout, scenario, channel, tcfg)

    def validation_batch(self) -> MultiApObservation:
        rng = streams.stream(self.tcfg.seed, streams.VALID)
        return sample_batch(self.layout, self.scenario, self.channel, self.tcfg, rng, self.tcfg.val_frames)

    def validate(self, batch: MultiApObservation) -> float:
        logits = self.rx.llrs(batch.y, batch.sigma2)
        return bmd_rate(logits, batch.coded_bits)

    def run(self, steps: int | None = None, log_path: str | Path | None = None,
            checkpoint_path: str | Path | None = None, wall_clock: bool = True) -> list[dict]:
        """Advance ``steps`` optimizer steps (default: up to ``tcfg.steps``).

        The batch for step s comes from its own random stream, so resuming from
        a checkpoint reproduces the uninterrupted run exactly.
        """
        target = self.tcfg.steps if steps is None else self.step + steps
        val = self.validation_batch() if self.tcfg.val_every else None
        writer = None
        if log_path is not None:
            new = not Path(log_path).exists() or self.step == 0
            fh = open(log_path, "w" if new else "a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(["step", "loss", "rate", "val_rate", "wall_clock"])
        t0 = time.perf_counter()
        last_good = None
        try:
            while self.step < target:
                rng = streams.stream(self.tcfg.seed, streams.TRAIN, self.step)
                batch = sample_batch(self.layout, self.scenario, self.channel, self.tcfg, rng,
                                     self.tcfg.batch_size)
                y, s2 = _drop_aps(batch, self.tcfg.ap_dropout, rng)
                try:
                    metrics = train_step(self.rx, self.state, y, s2, batch.coded_bits, self.tcfg.clip_norm,
                                         step_info=f"(step {self.step}, seed {self.tcfg.seed})")
                except TrainingDiverged:
                    if last_good is not None and checkpoint_path is not None:
                        self._restore(last_good)
                        self.save(checkpoint_path)
                    raise
                self.step += 1
                row = {"step": self.step, **metrics, "val_rate": ""}
                if val is not None and (self.step % self.tcfg.val_every == 0 or self.step == target):
                    row["val_rate"] = self.validate(val)
                    last_good = self._snapshot()
                    log.info("step %d loss %.4f val R_BMD %.4f", self.step, metrics["loss"], row["val_rate"])
                row["wall_clock"] = round(time.perf_counter() - t0, 3) if wall_clock else ""
                self.history.append(row)
                if writer is not None:
                    writer.writerow([row["step"], f"{row['loss']:.8g}", f"{row['rate']:.8g}",
                                     row["val_rate"] if row["val_rate"] == "" else f"{row['val_rate']:.8g}",
                                     row["wall_clock"]])
        finally:
            if writer is not None:
                fh.close()
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return self.history

    def _snapshot(self):
        return ({k: v.data.copy() for k, v in self.rx.params.items()},
                [m.copy() for m in self.state.m], [v.copy() for v in self.state.v], self.state.step, self.step)

    def _restore(self, snap):
        params, m, v, astep, step = snap
        for k, arr in params.items():
            self.rx.params[k].data = arr
        self.state.m, self.state.v, self.state.step, self.step = m, v, astep, step

    def save(self, path: str | Path) -> None:
        names = list(self.rx.params)
        hyper = {"lr": self.state.lr, "beta1": self.state.beta1, "beta2": self.state.beta2,
                 "eps": self.state.eps, "step": self.state.step}
        self.rx.save(path, extra={"train": _jsonable(asdict(self.tcfg)), "step": self.step, "adam": hyper,
                                  "scenario": _jsonable(asdict(self.scenario)),
                                  "channel": _jsonable(asdict(self.channel)),
                                  "code": {"name": self.layout.code.name, "n": self.layout.code.n},
                                  "bits_per_symbol": self.layout.constellation.bits_per_symbol},
                     extra_tensors=adam_to_tensors(names, self.state))

    @classmethod
    def resume(cls, path: str | Path, layout: FrameLayout, scenario: ScenarioConfig,
               channel: TdlChannelSpec, tcfg: TrainConfig | None = None) -> "Trainer":
        rx, meta, extras = NeuralReceiver.load(path)
        if tcfg is None:
            t = meta["train"]
            t["ebn0_range"] = tuple(t["ebn0_range"])
            tcfg = TrainConfig(**t)
        state = adam_from_tensors(list(rx.params), extras, meta["adam"])
        return cls(rx, layout, scenario, channel, tcfg, state=state, step=meta["step"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
