"""Experiment profiles and YAML config loading.

A profile fixes the grid, modulation, code, channel surrogate, model size,
training budget and Monte Carlo budget. ``micro`` is the desk-scale learning
setup, ``desk`` the full 48x36 grid with a reduced Monte Carlo budget, ``paper``
the full evaluation budget.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .channel import ScenarioConfig, TdlChannelSpec
from .ldpc import CodeConfig
from .mapping import ConstellationSpec
from .model import ModelConfig
from .resource_grid import FrameLayout, PilotMask
from .training import TrainConfig, noise_samples_for_range


@dataclass(frozen=True)
class GridConfig:
    n_subcarriers: int = 48
    n_symbols: int = 36
    pilot_cols_2: tuple[int, ...] = (2, 32)
    pilot_cols_1: tuple[int, ...] = (2,)
    bits_per_symbol: int = 6
    code_lifting: int = 27
    decoder_iterations: int = 25

    def pilots(self, n_cols: int) -> PilotMask:
        cols = {2: self.pilot_cols_2, 1: self.pilot_cols_1}.get(n_cols)
        if cols is None:
            raise ValueError(f"pilot configuration must be 1 or 2 columns, got {n_cols}")
        return PilotMask.columns(self.n_subcarriers, self.n_symbols, cols)

    def layout(self, n_cols: int) -> FrameLayout:
        code = CodeConfig.ieee80211n(self.code_lifting, max_iterations=self.decoder_iterations)
        return FrameLayout(code, ConstellationSpec(self.bits_per_symbol), self.pilots(n_cols))


@dataclass(frozen=True)
class SweepConfig:
    receivers: tuple[str, ...] = ("perfect", "lmmse", "ls")
    n_ap: tuple[int, ...] = (1, 2, 3)
    pilot_cols: int = 2
    ebn0_db: tuple[float, ...] = tuple(range(0, 26, 2))
    iterations: int = 200
    frames: int = 4
    seeds: tuple[int, ...] = (0, 1, 2)
    bandwidth_db: float = 1.0
    equalizer: str = "zf"
    fusion: str = "sum"
    uncoded: bool = False
    zero_noise: bool = False
    flat_channel: bool = False
    covariance_samples: int = 0  # 0: 20 x number of pilot REs

    def __post_init__(self):
        if self.iterations < 1 or self.frames < 1:
            raise ValueError("iterations and frames must be >= 1")
        if self.bandwidth_db <= 0:
            raise ValueError("smoothing bandwidth must be positive")
        e = list(self.ebn0_db)
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("Eb/N0 grid must be strictly increasing")


@dataclass(frozen=True)
class Profile:
    name: str
    grid: GridConfig
    channel: TdlChannelSpec
    scenario: ScenarioConfig
    model: ModelConfig
    train: TrainConfig
    sweep: SweepConfig

    def layout(self, n_cols: int | None = None) -> FrameLayout:
        return self.grid.layout(n_cols or self.sweep.pilot_cols)

    def model_config(self, n_cols: int | None = None) -> ModelConfig:
        """Model config with the noise feature standardised over the training range."""
        layout = self.layout(n_cols)
        cfg = replace(self.model, bits_per_symbol=self.grid.bits_per_symbol)
        samples = noise_samples_for_range(self.train.ebn0_range, layout.constellation.bits_per_symbol,
                                          layout.code.rate)
        return cfg.with_noise_standardization(samples)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


MICRO = Profile(
    name="micro",
    grid=GridConfig(n_subcarriers=12, n_symbols=12, pilot_cols_2=(2, 9), pilot_cols_1=(2,),
                    bits_per_symbol=2, code_lifting=10),
    channel=TdlChannelSpec(n_taps=4),
    scenario=ScenarioConfig(),
    model=ModelConfig(d_model=32, heads=4, layers=2, ffn_dim=64, head_hidden=64,
                      bits_per_symbol=2, max_aps=2),
    train=TrainConfig(steps=2000, batch_size=16, ebn0_range=(-2.0, 12.0), n_ap=1),
    sweep=SweepConfig(receivers=("transformer", "perfect", "lmmse", "ls"), n_ap=(1, 2),
                      ebn0_db=tuple(range(-2, 13, 2)), iterations=200, frames=4, seeds=(0, 1, 2)),
)

DESK = Profile(
    name="desk",
    grid=GridConfig(),
    channel=TdlChannelSpec(),
    scenario=ScenarioConfig(),
    model=ModelConfig(),
    train=TrainConfig(steps=2000, batch_size=2, ebn0_range=(0.0, 24.0), n_ap=3),
    sweep=SweepConfig(),
)

PAPER = replace(DESK, name="paper",
                train=replace(DESK.train, steps=30_000, batch_size=16),
                sweep=replace(DESK.sweep, iterations=5000, frames=16, seeds=(0, 1, 2, 3, 4)))

PROFILES = {p.name: p for p in (MICRO, DESK, PAPER)}


def _coerce(cls, current, value):
    """Build a dataclass (or tuple field) value from parsed YAML."""
    if dataclasses.is_dataclass(current):
        return _update(current, value)
    if isinstance(current, tuple) or (current is None and isinstance(value, list)):
        return tuple(value)
    return value


def _update(obj, changes: dict[str, Any]):
    fields = {f.name for f in dataclasses.fields(obj)}
    kw = {}
    for k, v in changes.items():
        if k not in fields:
            raise KeyError(f"unknown config key {type(obj).__name__}.{k}")
        kw[k] = _coerce(type(getattr(obj, k)), getattr(obj, k), v)
    return replace(obj, **kw)


def load_profile(name: str = "micro", path: str | Path | None = None,
                 overrides: dict[str, Any] | None = None) -> Profile:
    """Start from a named profile, apply a YAML file, then dotted overrides."""
    prof = PROFILES[name]
    if path is not None:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if "profile" in data:
            prof = PROFILES[data.pop("profile")]
        prof = _update(prof, data)
    for key, value in (overrides or {}).items():
        section, _, leaf = key.partition(".")
        prof = _update(prof, {section: {leaf: value}} if leaf else {section: value})
    return prof
