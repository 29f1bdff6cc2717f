"""Multi-AP scenario sampling, tapped-delay-line fading and observation synthesis.

The small-scale channel is a TDL surrogate: L complex-Gaussian taps with an
exponential power-delay profile, each evolving across OFDM symbols as an
AR(1) process whose coefficient follows the UE speed. Per-link large-scale
gains come from a log-distance pathloss on random placements in a square.
Channel grids have unit average energy, so each link's SNR is set entirely
by its noise variance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import streams
from .resource_grid import FrameLayout, PilotMask

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ScenarioConfig:
    n_ap: int = 1
    area_side: float = 25.0
    carrier_hz: float = 2.4e9
    bandwidth_hz: float = 20e6
    pathloss_exponent: float = 3.0
    ref_pathloss_db: float = 40.0
    min_distance: float = 1.0
    shadowing_db: float = 0.0
    speed_range: tuple[float, float] = (0.0, 3.0)
    ebn0_db: float = 10.0
    link_ebn0_db: tuple[float, ...] | None = None
    colocated: bool = False

    def __post_init__(self):
        if self.n_ap < 1:
            raise ValueError("need at least one AP")
        if self.area_side <= 0:
            raise ValueError("area side must be positive")
        lo, hi = self.speed_range
        if not 0.0 <= lo <= hi <= 3.0:
            raise ValueError(f"speed range {self.speed_range} outside [0, 3] m/s")
        if self.link_ebn0_db is not None and len(self.link_ebn0_db) != self.n_ap:
            raise ValueError("per-link Eb/N0 override must list one value per AP")


@dataclass(frozen=True)
class Scenario:
    ue: np.ndarray
    aps: np.ndarray
    distances: np.ndarray
    link_ebn0_db: np.ndarray

    @property
    def mean_ebn0_db(self) -> float:
        return float(self.link_ebn0_db.mean())


def sample_scenario(cfg: ScenarioConfig, rng: np.random.Generator) -> Scenario:
    """Drop the UE and APs uniformly in the square and derive per-link Eb/N0.

    Relative link gains follow the pathloss; the absolute level is shifted so
    that the mean of the per-link Eb/N0 values (in dB) equals ``cfg.ebn0_db``.
    """
    ue = rng.uniform(0, cfg.area_side, size=2)
    aps = rng.uniform(0, cfg.area_side, size=(cfg.n_ap, 2))
    if cfg.colocated:
        aps = np.broadcast_to(ue, aps.shape).copy()
    d = np.maximum(np.linalg.norm(aps - ue, axis=1), cfg.min_distance)
    if cfg.link_ebn0_db is not None:
        return Scenario(ue, aps, d, np.asarray(cfg.link_ebn0_db, dtype=float))
    gain_db = -(cfg.ref_pathloss_db + 10 * cfg.pathloss_exponent * np.log10(d))
    if cfg.shadowing_db > 0 and not cfg.colocated:
        gain_db = gain_db + cfg.shadowing_db * rng.standard_normal(cfg.n_ap)
    link = gain_db - gain_db.mean() + cfg.ebn0_db
    return Scenario(ue, aps, d, link)


def ebn0_to_noise_var(ebn0_db, bits_per_symbol: int, code_rate: float):
    """Noise variance for unit-energy symbols and unit-energy channels.

    ``Es/N0 = Eb/N0 * m * R``; pilot overhead is not charged to Eb.
    """
    snr = 10 ** (np.asarray(ebn0_db, dtype=float) / 10) * bits_per_symbol * code_rate
    return 1.0 / snr


def noise_var_to_ebn0(sigma2, bits_per_symbol: int, code_rate: float):
    return 10 * np.log10(1.0 / (np.asarray(sigma2) * bits_per_symbol * code_rate))


@dataclass(frozen=True)
class TdlChannelSpec:
    n_taps: int = 8
    max_delay: float = 0.1  # tau * subcarrier spacing, i.e. fraction of the useful symbol
    last_tap_db: float = -15.0
    carrier_hz: float = 2.4e9
    subcarrier_spacing: float = 15e3
    speed_range: tuple[float, float] = (0.0, 3.0)

    @property
    def delays(self) -> np.ndarray:
        if self.n_taps == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.max_delay, self.n_taps)

    @property
    def tap_powers(self) -> np.ndarray:
        if self.n_taps == 1:
            return np.ones(1)
        p = 10 ** (self.last_tap_db / 10 * np.arange(self.n_taps) / (self.n_taps - 1))
        return p / p.sum()

    def ar_coefficient(self, speed) -> np.ndarray:
        """Per-symbol tap correlation: Gaussian approximation of J0(2 pi f_d T)."""
        fd = np.asarray(speed, dtype=float) * self.carrier_hz / SPEED_OF_LIGHT
        return np.exp(-0.5 * (2 * np.pi * fd / self.subcarrier_spacing) ** 2)

    def key(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def generate_channel(spec: TdlChannelSpec, n_subcarriers: int, n_symbols: int,
                     rng: np.random.Generator, size: tuple[int, ...] = ()) -> np.ndarray:
    """Draw channel grids of shape ``size + (n_subcarriers, n_symbols)``."""
    L = spec.n_taps
    p = spec.tap_powers
    speed = rng.uniform(*spec.speed_range, size=size)
    rho = spec.ar_coefficient(speed)[..., None]  # (..., 1) broadcast over taps
    innov = np.sqrt(1 - rho ** 2)
    w = (rng.standard_normal(size + (n_symbols, L)) + 1j * rng.standard_normal(size + (n_symbols, L))) / np.sqrt(2)
    w = w * np.sqrt(p)
    g = np.empty_like(w)
    g[..., 0, :] = w[..., 0, :]
    for t in range(1, n_symbols):
        g[..., t, :] = rho * g[..., t - 1, :] + innov * w[..., t, :]
    f = np.arange(n_subcarriers)
    steer = np.exp(-2j * np.pi * np.outer(f, spec.delays))  # (n_c, L)
    return np.einsum("fl,...tl->...ft", steer, g)


def apply_channel(x: np.ndarray, h: np.ndarray, sigma2, rng: np.random.Generator) -> np.ndarray:
    """``y = h * x + n`` with circular Gaussian noise of variance ``sigma2``.

    ``sigma2`` broadcasts against the leading axes of ``h`` (one value per grid).
    """
    x = np.asarray(x)
    h = np.asarray(h)
    if x.shape[-2:] != h.shape[-2:]:
        raise ValueError(f"grid shapes differ: x{x.shape} vs h{h.shape}")
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0):
        raise ValueError("noise variance must be non-negative")
    hx = h * x
    std = np.sqrt(sigma2 / 2)[..., None, None]
    noise = std * (rng.standard_normal(hx.shape) + 1j * rng.standard_normal(hx.shape))
    return hx + noise


@dataclass
class MultiApObservation:
    """A batch of transmissions, each seen by ``n_ap`` access points.

    Arrays carry a leading frame axis B; AP-indexed arrays have shape (B, R, ...).
    """

    y: np.ndarray  # (B, R, n_c, n_s) complex
    sigma2: np.ndarray  # (B, R)
    x: np.ndarray  # (B, n_c, n_s)
    h: np.ndarray  # (B, R, n_c, n_s)
    coded_bits: np.ndarray  # (B, capacity)
    info_bits: np.ndarray  # (B, n_info)
    link_ebn0_db: np.ndarray  # (B, R)
    ebn0_db: np.ndarray  # (B,) configured target
    noise: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_frames(self) -> int:
        return self.y.shape[0]

    @property
    def n_ap(self) -> int:
        return self.y.shape[1]

    def select_aps(self, index) -> "MultiApObservation":
        index = np.atleast_1d(index)
        return MultiApObservation(
            y=self.y[:, index], sigma2=self.sigma2[:, index], x=self.x, h=self.h[:, index],
            coded_bits=self.coded_bits, info_bits=self.info_bits,
            link_ebn0_db=self.link_ebn0_db[:, index], ebn0_db=self.ebn0_db,
            noise=None if self.noise is None else self.noise[:, index])


def make_observation(cfg: ScenarioConfig, layout: FrameLayout, payload: np.ndarray,
                     channel_spec: TdlChannelSpec, rng: np.random.Generator,
                     link_ebn0_db: np.ndarray | None = None,
                     flat_channel: bool = False, keep_noise: bool = False) -> MultiApObservation:
    """Run encode -> map -> assemble -> per-AP fading + noise for a batch of payloads.

    ``payload`` is (B, n_info) or (n_info,). Without ``link_ebn0_db`` every
    frame draws its own topology; pass a (R,) or (B, R) array to pin it.
    ``flat_channel`` replaces fading by H = 1 everywhere.
    """
    payload = np.atleast_2d(np.asarray(payload, dtype=np.uint8))
    B, R = payload.shape[0], cfg.n_ap
    if link_ebn0_db is None:
        link_ebn0_db = np.stack([sample_scenario(cfg, rng).link_ebn0_db for _ in range(B)])
    link_ebn0_db = np.broadcast_to(np.asarray(link_ebn0_db, dtype=float), (B, R)).copy()
    m = layout.constellation.bits_per_symbol
    sigma2 = ebn0_to_noise_var(link_ebn0_db, m, layout.code.rate)

    coded = layout.encode(payload, rng)
    x = layout.transmit_grid(coded)
    n_c, n_s = layout.pilots.shape
    if flat_channel:
        h = np.ones((B, R, n_c, n_s), dtype=complex)
    else:
        h = generate_channel(channel_spec, n_c, n_s, rng, size=(B, R))
    hx = h * x[:, None]
    y = apply_channel(x[:, None], h, sigma2, rng)
    return MultiApObservation(
        y=y, sigma2=sigma2, x=x, h=h, coded_bits=coded, info_bits=payload,
        link_ebn0_db=link_ebn0_db,
        ebn0_db=link_ebn0_db.mean(axis=1),
        noise=(y - hx) if keep_noise else None)


@dataclass(frozen=True)
class ChannelCovariance:
    """Second-order statistics of vectorised channel grids.

    ``r_pp`` is the pilot/pilot covariance, ``r_ap`` all-RE/pilot cross
    covariance (REs in row-major (f, t) order), ``r_diag`` the per-RE power.
    """

    r_pp: np.ndarray
    r_ap: np.ndarray
    r_diag: np.ndarray
    n_samples: int


def _psd_project(r: np.ndarray) -> np.ndarray:
    r = 0.5 * (r + r.conj().T)
    w, v = np.linalg.eigh(r)
    r = (v * np.maximum(w, 0)) @ v.conj().T
    return 0.5 * (r + r.conj().T)


def empirical_covariance(spec: TdlChannelSpec, mask: PilotMask, n_samples: int,
                         rng: np.random.Generator, batch: int = 2000) -> ChannelCovariance:
    n_p = mask.n_pilots
    if n_samples < 10 * n_p:
        raise ValueError(f"need at least {10 * n_p} samples for a {n_p}-pilot covariance, got {n_samples}")
    n_c, n_s = mask.shape
    pf, pt = mask.pilot_index
    pflat = pf * n_s + pt
    r_pp = np.zeros((n_p, n_p), dtype=complex)
    r_ap = np.zeros((n_c * n_s, n_p), dtype=complex)
    r_diag = np.zeros(n_c * n_s)
    done = 0
    while done < n_samples:
        b = min(batch, n_samples - done)
        h = generate_channel(spec, n_c, n_s, rng, size=(b,)).reshape(b, -1)
        hp = h[:, pflat]
        r_pp += hp.T @ hp.conj()
        r_ap += h.T @ hp.conj()
        r_diag += (np.abs(h) ** 2).sum(axis=0)
        done += b
    return ChannelCovariance(r_pp=_psd_project(r_pp / n_samples), r_ap=r_ap / n_samples,
                             r_diag=r_diag / n_samples, n_samples=n_samples)


def cached_covariance(spec: TdlChannelSpec, mask: PilotMask, n_samples: int, seed: int,
                      cache_dir: str | Path | None = None) -> ChannelCovariance:
    """Empirical covariance, memoised on disk by (spec, pilot layout, samples, seed)."""
    rng = streams.stream(seed, streams.COVARIANCE)
    if cache_dir is None:
        return empirical_covariance(spec, mask, n_samples, rng)
    h = hashlib.sha256()
    h.update(spec.key().encode())
    h.update(np.packbits(mask.mask).tobytes())
    h.update(f"{mask.shape}-{n_samples}-{seed}".encode())
    path = Path(cache_dir) / f"cov-{h.hexdigest()[:20]}.npz"
    if path.exists():
        z = np.load(path)
        return ChannelCovariance(z["r_pp"], z["r_ap"], z["r_diag"], int(z["n_samples"]))
    cov = empirical_covariance(spec, mask, n_samples, rng)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, r_pp=cov.r_pp, r_ap=cov.r_ap, r_diag=cov.r_diag, n_samples=cov.n_samples)
    return cov
