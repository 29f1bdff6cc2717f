"""Pilot layouts, grid assembly/extraction and codeword segmentation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .ldpc import CodeConfig, ldpc_encode
from .mapping import ConstellationSpec, qam_map

PILOT_SEED = 20240613


@dataclass(frozen=True)
class PilotMask:
    """Boolean (n_subcarriers, n_symbols) pilot layout plus known pilot values."""

    mask: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @classmethod
    def columns(cls, n_subcarriers: int, n_symbols: int, pilot_cols, seed: int = PILOT_SEED) -> "PilotMask":
        """Full pilot columns carrying pseudo-random unit-modulus QPSK symbols."""
        mask = np.zeros((n_subcarriers, n_symbols), dtype=bool)
        for c in pilot_cols:
            if not 0 <= c < n_symbols:
                raise ValueError(f"pilot column {c} outside grid of {n_symbols} symbols")
            mask[:, c] = True
        rng = np.random.default_rng(seed)
        phase = rng.integers(0, 4, size=mask.shape)
        values = np.where(mask, np.exp(1j * (np.pi / 4 + np.pi / 2 * phase)), 0)
        return cls(mask=mask, values=values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def n_pilots(self) -> int:
        return int(self.mask.sum())

    @property
    def n_data(self) -> int:
        return self.mask.size - self.n_pilots

    @cached_property
    def pilot_cols(self) -> np.ndarray:
        return np.nonzero(self.mask.all(axis=0))[0]

    @cached_property
    def data_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(subcarrier, symbol) of each data RE in fill order: down the
        subcarriers of one OFDM symbol, then the next symbol to the right."""
        t, f = np.nonzero(~self.mask.T)
        return f, t

    @cached_property
    def pilot_index(self) -> tuple[np.ndarray, np.ndarray]:
        return np.nonzero(self.mask)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["subcarrier", "symbol", "pilot", "real", "imag"])
            for f in range(self.shape[0]):
                for t in range(self.shape[1]):
                    v = self.values[f, t]
                    w.writerow([f, t, int(self.mask[f, t]), f"{v.real:.17g}", f"{v.imag:.17g}"])


def grid_assemble(symbols: np.ndarray, mask: PilotMask) -> np.ndarray:
    """Place data symbols (..., n_data) and pilots onto (..., n_c, n_s) grids."""
    symbols = np.asarray(symbols)
    if symbols.shape[-1] != mask.n_data:
        raise ValueError(f"expected {mask.n_data} data symbols, got {symbols.shape[-1]}")
    grid = np.broadcast_to(mask.values, symbols.shape[:-1] + mask.shape).astype(complex)
    f, t = mask.data_index
    grid[..., f, t] = symbols
    return grid


def grid_extract_data(grid: np.ndarray, mask: PilotMask) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.shape[-2:] != mask.shape:
        raise ValueError(f"grid shape {grid.shape[-2:]} does not match mask {mask.shape}")
    f, t = mask.data_index
    return grid[..., f, t]


@dataclass(frozen=True)
class FrameLayout:
    """How LDPC codewords are packed onto one resource grid.

    ``n_codewords = floor(capacity / n)``; leftover coded-bit positions carry
    filler bits known to the receiver that never enter BER accounting. They
    are zeros unless a generator is supplied, in which case they are random
    so a learned receiver cannot key on them.
    """

    code: CodeConfig
    constellation: ConstellationSpec
    pilots: PilotMask

    @property
    def capacity(self) -> int:
        return self.pilots.n_data * self.constellation.bits_per_symbol

    @property
    def n_codewords(self) -> int:
        n = self.capacity // self.code.n
        if n < 1:
            raise ValueError(f"grid capacity {self.capacity} bits cannot hold one codeword of {self.code.n}")
        return n

    @property
    def n_filler(self) -> int:
        return self.capacity - self.n_codewords * self.code.n

    @property
    def n_info(self) -> int:
        return self.n_codewords * self.code.k

    @property
    def n_coded(self) -> int:
        return self.n_codewords * self.code.n

    def encode(self, info_bits: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        """(..., n_info) info bits -> (..., capacity) coded bits, filler appended."""
        info_bits = np.asarray(info_bits, dtype=np.uint8)
        if info_bits.shape[-1] != self.n_info:
            raise ValueError(f"expected {self.n_info} payload bits, got {info_bits.shape[-1]}")
        u = info_bits.reshape(info_bits.shape[:-1] + (self.n_codewords, self.code.k))
        cw = ldpc_encode(u, self.code).reshape(info_bits.shape[:-1] + (self.n_coded,))
        fshape = info_bits.shape[:-1] + (self.n_filler,)
        if rng is None:
            filler = np.zeros(fshape, dtype=np.uint8)
        else:
            filler = rng.integers(0, 2, size=fshape, dtype=np.uint8)
        return np.concatenate([cw, filler], axis=-1)

    def transmit_grid(self, coded_bits: np.ndarray) -> np.ndarray:
        return grid_assemble(qam_map(coded_bits, self.constellation), self.pilots)

    def split_codewords(self, llrs: np.ndarray) -> np.ndarray:
        """(..., capacity) LLRs -> (..., n_codewords, n), dropping filler."""
        llrs = np.asarray(llrs)
        return llrs[..., :self.n_coded].reshape(llrs.shape[:-1] + (self.n_codewords, self.code.n))
