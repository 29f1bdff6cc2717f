"""Binary LDPC codes: GF(2) systematic encoding and normalized min-sum decoding.

The default code is the IEEE 802.11n rate-3/4 quasi-cyclic code with
n = 648 (lifting factor 27). Smaller members of the same family are obtained
by reducing the circulant shifts modulo a smaller lifting factor, which keeps
the dual-diagonal parity structure and therefore an invertible parity part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse

# 802.11n, R = 3/4, Z = 27 (6 x 24 base matrix, -1 = zero block)
BASE_80211N_R34 = np.array([
    [16, 17, 22, 24, 9, 3, 14, -1, 4, 2, 7, -1, 26, -1, 2, -1, 21, -1, 1, 0, -1, -1, -1, -1],
    [25, 12, 12, 3, 3, 26, 6, 21, -1, 15, 22, -1, 15, -1, 4, -1, -1, 16, -1, 0, 0, -1, -1, -1],
    [25, 18, 26, 16, 22, 23, 9, -1, 0, -1, 4, -1, 4, -1, 8, 23, 11, -1, -1, -1, 0, 0, -1, -1],
    [9, 7, 0, 1, 17, -1, -1, 7, 3, -1, 3, 23, -1, 16, -1, -1, 21, -1, 0, -1, -1, 0, 0, -1],
    [24, 5, 26, 7, 1, -1, -1, 15, 24, 15, -1, 8, -1, 13, -1, 13, -1, 11, -1, -1, -1, -1, 0, 0],
    [2, 2, 19, 14, 24, 1, 15, 19, -1, 21, -1, 2, -1, 24, -1, 3, -1, 2, 1, -1, -1, -1, -1, 0],
])

LLR_CLAMP = 20.0


def expand_base_matrix(base: np.ndarray, z: int) -> np.ndarray:
    rows, cols = base.shape
    H = np.zeros((rows * z, cols * z), dtype=np.uint8)
    eye = np.eye(z, dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            s = base[r, c]
            if s >= 0:
                H[r * z:(r + 1) * z, c * z:(c + 1) * z] = np.roll(eye, s % z, axis=1)
    return H


def _gf2_systematic(H: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-reduce H; returns (info positions, parity positions, P) with c_parity = P c_info."""
    A = (H % 2).astype(np.uint8).copy()
    n_rows, n = A.shape
    pivots: list[int] = []
    row = 0
    # scan columns right-to-left so parity lands on the trailing positions when possible
    for col in range(n - 1, -1, -1):
        if row == n_rows:
            break
        hits = np.nonzero(A[row:, col])[0]
        if hits.size == 0:
            continue
        r = row + hits[0]
        if r != row:
            A[[row, r]] = A[[r, row]]
        others = np.nonzero(A[:, col])[0]
        others = others[others != row]
        A[others] ^= A[row]
        pivots.append(col)
        row += 1
    if row != n_rows:
        raise ValueError(f"parity-check matrix is rank deficient (rank {row} < {n_rows})")
    parity = np.array(pivots)
    info = np.setdiff1d(np.arange(n), parity)
    # row i of A has a single 1 among the pivots, at parity[i]
    P = A[:, info]
    return info, parity, P


@dataclass(frozen=True)
class CodeConfig:
    H: np.ndarray = field(repr=False)
    max_iterations: int = 25
    normalization: float = 0.8
    name: str = "custom"

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def k(self) -> int:
        return self.n - self.H.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n

    @cached_property
    def _systematic(self):
        return _gf2_systematic(self.H)

    @property
    def info_positions(self) -> np.ndarray:
        return self._systematic[0]

    @cached_property
    def _edges(self):
        checks, vars_ = np.nonzero(self.H)
        deg = np.bincount(checks, minlength=self.H.shape[0])
        dmax = int(deg.max())
        idx = np.full((self.H.shape[0], dmax), -1)
        starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
        slot = np.arange(checks.size) - starts[checks]
        idx[checks, slot] = vars_
        return idx

    @cached_property
    def _scatter(self):
        # maps edge messages (in row-major order of valid slots) onto variable nodes
        idx = self._edges
        cols = idx[idx >= 0]
        return sparse.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)),
                                 shape=(cols.size, self.n))

    @classmethod
    def ieee80211n(cls, lifting: int = 27, **kw) -> "CodeConfig":
        H = expand_base_matrix(BASE_80211N_R34, lifting)
        return cls(H=H, name=f"80211n-r34-z{lifting}", **kw)

    @classmethod
    def from_alist(cls, path: str | Path, **kw) -> "CodeConfig":
        return cls(H=read_alist(path), name=Path(path).stem, **kw)


def read_alist(path: str | Path) -> np.ndarray:
    """Parse an alist file (MacKay format) into a dense 0/1 matrix."""
    tokens = Path(path).read_text().split()
    vals = iter(int(t) for t in tokens)
    n, m = next(vals), next(vals)
    max_col = next(vals)
    next(vals)  # max row weight
    col_w = [next(vals) for _ in range(n)]
    for _ in range(m):  # row weights are implied by the column lists
        next(vals)
    H = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        entries = [next(vals) for _ in range(max_col)]
        for r in entries[:col_w[j]]:
            if r > 0:
                H[r - 1, j] = 1
    return H


def write_alist(H: np.ndarray, path: str | Path) -> None:
    m, n = H.shape
    col = [np.nonzero(H[:, j])[0] + 1 for j in range(n)]
    row = [np.nonzero(H[i])[0] + 1 for i in range(m)]
    mc = max(len(c) for c in col)
    mr = max(len(r) for r in row)
    lines = [f"{n} {m}", f"{mc} {mr}",
             " ".join(str(len(c)) for c in col), " ".join(str(len(r)) for r in row)]
    lines += [" ".join(map(str, list(c) + [0] * (mc - len(c)))) for c in col]
    lines += [" ".join(map(str, list(r) + [0] * (mr - len(r)))) for r in row]
    Path(path).write_text("\n".join(lines) + "\n")


def ldpc_encode(info_bits: np.ndarray, cfg: CodeConfig) -> np.ndarray:
    """Systematic encoding; accepts (..., k) and returns (..., n)."""
    u = np.asarray(info_bits, dtype=np.uint8)
    if u.shape[-1] != cfg.k:
        raise ValueError(f"expected {cfg.k} info bits, got {u.shape[-1]}")
    info, parity, P = cfg._systematic
    c = np.zeros(u.shape[:-1] + (cfg.n,), dtype=np.uint8)
    c[..., info] = u
    c[..., parity] = (u.astype(np.int64) @ P.T.astype(np.int64)) % 2
    return c


def syndrome(codeword: np.ndarray, cfg: CodeConfig) -> np.ndarray:
    return (np.asarray(codeword, dtype=np.int64) @ cfg.H.T.astype(np.int64)) % 2


def ldpc_decode_bp(llrs: np.ndarray, cfg: CodeConfig, return_iterations: bool = False):
    """Normalized min-sum decoding of (..., n) LLRs (log p1/p0 convention).

    Returns hard info-bit decisions and a per-codeword convergence flag.
    Iteration stops as soon as every codeword in the batch satisfies its
    parity checks; a codeword is flagged converged only if its own syndrome
    is zero.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.shape[-1] != cfg.n:
        raise ValueError(f"expected {cfg.n} LLRs, got {llrs.shape[-1]}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("LLRs must be finite")
    lead = llrs.shape[:-1]
    # internal convention: positive means bit 0
    ch = -np.clip(llrs.reshape(-1, cfg.n), -LLR_CLAMP, LLR_CLAMP)
    B = ch.shape[0]
    idx = cfg._edges
    valid = idx >= 0
    safe_idx = np.where(valid, idx, 0)
    c2v = np.zeros((B,) + idx.shape)
    H64 = cfg.H.T.astype(np.int64)
    scatter = cfg._scatter

    hard = (ch < 0).astype(np.uint8)
    converged = np.zeros(B, dtype=bool)
    iterations = 0
    for it in range(cfg.max_iterations):
        iterations = it + 1
        total = ch + scatter.T.dot(c2v[:, valid].T).T
        v2c = total[:, safe_idx] - c2v
        v2c = np.where(valid, v2c, np.inf)
        mag = np.abs(v2c)
        sgn = np.where(v2c < 0, -1.0, 1.0)
        sign_prod = np.prod(sgn, axis=-1, keepdims=True)
        order = np.argpartition(mag, 1, axis=-1)[..., :2]
        m1 = np.take_along_axis(mag, order[..., :1], axis=-1)
        m2 = np.take_along_axis(mag, order[..., 1:2], axis=-1)
        is_min = np.arange(idx.shape[1]) == order[..., :1]
        other = np.where(is_min, m2, m1)
        c2v = cfg.normalization * sign_prod * sgn * other
        c2v = np.where(valid, c2v, 0.0)

        post = ch + scatter.T.dot(c2v[:, valid].T).T
        hard = (post < 0).astype(np.uint8)
        # an exactly-zero posterior is an erasure, never a confident decision
        converged = ~((hard.astype(np.int64) @ H64) % 2).any(axis=1) & (post != 0).all(axis=1)
        if converged.all():
            break
    info = hard[:, cfg.info_positions].reshape(lead + (cfg.k,))
    conv = converged.reshape(lead) if lead else bool(converged[0])
    if return_iterations:
        return info, conv, iterations
    return info, conv
