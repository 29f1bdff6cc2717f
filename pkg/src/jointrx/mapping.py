"""Gray-labelled square QAM mapping and max-log soft demapping.

Bit order inside a symbol label: the first m/2 bits select the in-phase
level, the last m/2 the quadrature level, each Gray coded along its axis.
LLRs follow ``log p(c=1) / p(c=0)`` throughout the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


def gray_code(nbits: int) -> np.ndarray:
    i = np.arange(1 << nbits)
    return i ^ (i >> 1)


def int_to_bits(values: np.ndarray, nbits: int) -> np.ndarray:
    """MSB-first bit expansion along a new trailing axis."""
    shifts = np.arange(nbits - 1, -1, -1)
    return ((np.asarray(values)[..., None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True)
class ConstellationSpec:
    bits_per_symbol: int

    def __post_init__(self):
        m = self.bits_per_symbol
        if m < 2 or m % 2:
            raise ValueError("square QAM needs an even, positive number of bits per symbol")

    @property
    def order(self) -> int:
        return 1 << self.bits_per_symbol

    @property
    def axis_bits(self) -> int:
        return self.bits_per_symbol // 2

    @cached_property
    def scale(self) -> float:
        return float(np.sqrt(2.0 * (self.order - 1) / 3.0))

    @cached_property
    def axis_levels(self) -> np.ndarray:
        """Normalised PAM amplitudes, ascending."""
        L = 1 << self.axis_bits
        return (2.0 * np.arange(L) - (L - 1)) / self.scale

    @cached_property
    def axis_labels(self) -> np.ndarray:
        """Gray label (as bits) of each ascending PAM level, shape (L, m/2)."""
        return int_to_bits(gray_code(self.axis_bits), self.axis_bits)

    @cached_property
    def _label_to_level(self) -> np.ndarray:
        g = gray_code(self.axis_bits)
        inv = np.empty_like(g)
        inv[g] = np.arange(g.size)
        return inv

    @cached_property
    def points(self) -> np.ndarray:
        """Complex point for every integer label 0..M-1 (MSB-first bits)."""
        labels = np.arange(self.order)
        k = self.axis_bits
        i_lab = labels >> k
        q_lab = labels & ((1 << k) - 1)
        lev = self.axis_levels
        return lev[self._label_to_level[i_lab]] + 1j * lev[self._label_to_level[q_lab]]

    @cached_property
    def point_bits(self) -> np.ndarray:
        return int_to_bits(np.arange(self.order), self.bits_per_symbol)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "bits", "real", "imag"])
            for lab, (pt, bits) in enumerate(zip(self.points, self.point_bits)):
                w.writerow([lab, "".join(map(str, bits)), f"{pt.real:.17g}", f"{pt.imag:.17g}"])


def qam_map(bits: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    bits = np.asarray(bits)
    m = spec.bits_per_symbol
    if bits.shape[-1] % m:
        raise ValueError(f"bit count {bits.shape[-1]} not divisible by bits-per-symbol {m}")
    groups = bits.reshape(*bits.shape[:-1], -1, m).astype(np.int64)
    labels = groups @ (1 << np.arange(m - 1, -1, -1))
    return spec.points[labels]


def hard_demap(symbols: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Nearest-point decisions, returned as bits with trailing axis flattened per symbol."""
    llr = exact_llr_demap(symbols, 1.0, 1.0, spec)
    bits = (llr > 0).astype(np.uint8)
    return bits.reshape(*bits.shape[:-2], -1)


def _axis_llr(u: np.ndarray, spec: ConstellationSpec) -> np.ndarray:
    """Per-axis max-log metric (unscaled) for the m/2 bits of one PAM axis.

    Returns ``min_{level: bit=0} (u-level)^2 - min_{level: bit=1} (u-level)^2``.
    """
    d = (u[..., None] - spec.axis_levels) ** 2  # (..., L)
    labels = spec.axis_labels  # (L, k)
    out = np.empty(u.shape + (spec.axis_bits,))
    for j in range(spec.axis_bits):
        one = labels[:, j].astype(bool)
        out[..., j] = d[..., ~one].min(axis=-1) - d[..., one].min(axis=-1)
    return out


def exact_llr_demap(y, h, sigma2, spec: ConstellationSpec) -> np.ndarray:
    """Max-log LLRs of ``y = h x + n`` with ``n ~ CN(0, sigma2)``.

    Broadcasts over ``y``, ``h`` and ``sigma2``; output gains a trailing axis
    of length m. Uses the I/Q separability of square QAM: after rotating by
    ``h`` the metric splits into two PAM problems whose common terms cancel.
    """
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("noise variance must be positive")
    y, h, sigma2 = np.broadcast_arrays(y, h, sigma2)
    gain = np.abs(h) ** 2
    safe = np.where(gain > 0, h, 1.0)
    z = np.where(gain > 0, y / safe, 0.0)
    scale = (gain / sigma2)[..., None]
    llr_i = _axis_llr(z.real, spec)
    llr_q = _axis_llr(z.imag, spec)
    return scale * np.concatenate([llr_i, llr_q], axis=-1)


def brute_force_llr(y, h, sigma2, spec: ConstellationSpec) -> np.ndarray:
    """Reference max-log demapper: exhaustive search over all M points."""
    y = np.asarray(y, dtype=complex)[..., None]
    h = np.asarray(h, dtype=complex)[..., None]
    s2 = np.asarray(sigma2, dtype=float)[..., None]
    metric = np.abs(y - h * spec.points) ** 2 / s2  # (..., M)
    bits = spec.point_bits.astype(bool)
    out = []
    for i in range(spec.bits_per_symbol):
        out.append(metric[..., ~bits[:, i]].min(axis=-1) - metric[..., bits[:, i]].min(axis=-1))
    return np.stack(out, axis=-1)
