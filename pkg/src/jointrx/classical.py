"""Baseline receivers: pilot-based LS/LMMSE estimation, per-RE equalization,
soft demapping, a genie perfect-CSI demapper and central LLR fusion.

All functions broadcast over leading (frame, AP) axes of the grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelCovariance
from .mapping import ConstellationSpec, exact_llr_demap
from .resource_grid import PilotMask, grid_extract_data

H_FLOOR = 1e-6


@dataclass
class ChannelEstimate:
    h: np.ndarray  # (..., n_c, n_s) complex
    err_var: np.ndarray  # (..., n_c, n_s) estimation error variance
    method: str


@dataclass(frozen=True)
class FusionPolicy:
    mode: str = "sum"  # "sum" | "snr"

    def __post_init__(self):
        if self.mode not in ("sum", "snr"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")


def _sigma_grid(sigma2, lead: tuple[int, ...]) -> np.ndarray:
    return np.broadcast_to(np.asarray(sigma2, dtype=float), lead)[..., None, None]


def interpolate_grid(h_pilot_cols: np.ndarray, pilot_cols: np.ndarray, n_symbols: int) -> np.ndarray:
    """Linear interpolation in time between pilot columns, flat outside them.

    ``h_pilot_cols`` has shape (..., n_c, P) with one column per entry of
    ``pilot_cols`` (ascending).
    """
    pilot_cols = np.asarray(pilot_cols)
    if pilot_cols.size == 0:
        raise ValueError("pilot mask is empty")
    if pilot_cols.size == 1:
        return np.repeat(h_pilot_cols, n_symbols, axis=-1)
    t = np.arange(n_symbols)
    right = np.clip(np.searchsorted(pilot_cols, t, side="right"), 1, pilot_cols.size - 1)
    left = right - 1
    t0, t1 = pilot_cols[left], pilot_cols[right]
    w = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
    return h_pilot_cols[..., left] * (1 - w) + h_pilot_cols[..., right] * w


def _interp_weights(pilot_cols: np.ndarray, n_symbols: int) -> np.ndarray:
    """(n_s, P) matrix W with interpolated column t = sum_p W[t, p] * column_p."""
    eye = np.eye(len(pilot_cols))
    return interpolate_grid(eye, pilot_cols, n_symbols).T


def ls_estimate(y: np.ndarray, mask: PilotMask, sigma2=0.0) -> ChannelEstimate:
    """LS pilot estimates ``Y_p / X_p``, interpolated across the grid.

    Requires a layout of full pilot columns.
    """
    if mask.n_pilots == 0:
        raise ValueError("pilot mask is empty")
    cols = mask.pilot_cols
    if cols.size * mask.shape[0] != mask.n_pilots:
        raise ValueError("LS interpolation expects full pilot columns")
    xp = mask.values[:, cols]
    if np.any(np.abs(xp) == 0):
        raise ValueError("zero-valued pilot symbol")
    hp = y[..., :, cols] / xp
    h = interpolate_grid(hp, cols, mask.shape[1])
    # error variance of a convex combination of independent pilot estimates
    w = _interp_weights(cols, mask.shape[1])
    noise_gain = (w ** 2).sum(axis=1) / np.mean(np.abs(xp) ** 2)
    err = _sigma_grid(sigma2, y.shape[:-2]) * noise_gain
    return ChannelEstimate(h=h, err_var=np.broadcast_to(err, h.shape), method="ls")


def lmmse_estimate(y: np.ndarray, mask: PilotMask, cov: ChannelCovariance, sigma2) -> ChannelEstimate:
    """``H_all = R_ap (R_pp + sigma2 I)^-1 H_ls,p`` per grid, with posterior variance."""
    n_c, n_s = mask.shape
    n_p = mask.n_pilots
    if cov.r_pp.shape != (n_p, n_p) or cov.r_ap.shape != (n_c * n_s, n_p):
        raise ValueError("covariance dimensions do not match the pilot layout")
    pf, pt = mask.pilot_index
    lead = y.shape[:-2]
    hp = (y[..., pf, pt] / mask.values[pf, pt]).reshape(-1, n_p)
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), lead).reshape(-1)
    h = np.empty((hp.shape[0], n_c * n_s), dtype=complex)
    var = np.empty((hp.shape[0], n_c * n_s))
    eye = np.eye(n_p)
    # grids sharing a noise level share the filter
    for level in np.unique(s2):
        sel = s2 == level
        A = cov.r_pp + level * eye
        if np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError("regularised pilot covariance is singular")
        filt = np.linalg.solve(A, cov.r_ap.conj().T).conj().T  # R_ap A^-1 (A Hermitian)
        h[sel] = hp[sel] @ filt.T
        post = cov.r_diag - np.einsum("ap,ap->a", filt, cov.r_ap.conj()).real
        var[sel] = np.maximum(post, 0.0)
    return ChannelEstimate(h=h.reshape(lead + (n_c, n_s)), err_var=var.reshape(lead + (n_c, n_s)),
                           method="lmmse")


def perfect_estimate(h: np.ndarray) -> ChannelEstimate:
    return ChannelEstimate(h=h, err_var=np.zeros(h.shape), method="perfect")


def equalize(y: np.ndarray, est: ChannelEstimate, sigma2, mode: str = "zf") -> tuple[np.ndarray, np.ndarray]:
    """Per-RE equalization. Returns (symbol estimates, post-equalization noise variance)."""
    h = est.h
    mag2 = np.maximum(np.abs(h) ** 2, H_FLOOR ** 2)
    h = np.where(np.abs(h) < H_FLOOR, H_FLOOR, h)
    s2 = _sigma_grid(sigma2, y.shape[:-2])
    if mode == "zf":
        return y / h, s2 / mag2
    if mode == "mmse":
        xhat = h.conj() * y / (mag2 + s2)
        return xhat, s2 * mag2 / (mag2 + s2) ** 2
    raise ValueError(f"unknown equalizer {mode!r}")


def demap_equalized(xhat: np.ndarray, noise_var: np.ndarray, est: ChannelEstimate,
                    mask: PilotMask, spec: ConstellationSpec) -> np.ndarray:
    """Soft-demap equalized data REs; estimator error variance inflates the noise.

    Returns (..., n_data * m) LLRs in data-RE fill order.
    """
    mag2 = np.maximum(np.abs(est.h) ** 2, H_FLOOR ** 2)
    total = noise_var + est.err_var / mag2
    x = grid_extract_data(xhat, mask)
    v = grid_extract_data(np.broadcast_to(total, xhat.shape), mask)
    llr = exact_llr_demap(x, 1.0, np.maximum(v, 1e-12), spec)
    return llr.reshape(llr.shape[:-2] + (-1,))


def perfect_csi_llr(y: np.ndarray, h: np.ndarray, sigma2, mask: PilotMask,
                    spec: ConstellationSpec) -> np.ndarray:
    s2 = _sigma_grid(sigma2, y.shape[:-2])
    llr = exact_llr_demap(grid_extract_data(y, mask), grid_extract_data(h, mask),
                          grid_extract_data(np.broadcast_to(s2, y.shape), mask), spec)
    return llr.reshape(llr.shape[:-2] + (-1,))


def fuse_llrs(llrs: np.ndarray, policy: FusionPolicy, snr=None, axis: int = 1) -> np.ndarray:
    """Combine per-AP LLRs stacked along ``axis``.

    ``sum`` adds them (optimal for calibrated, independent LLRs); ``snr``
    forms the convex combination with weights SNR_r / sum SNR.
    """
    llrs = np.asarray(llrs)
    if llrs.shape[axis] < 1:
        raise ValueError("need at least one AP")
    if policy.mode == "sum":
        return llrs.sum(axis=axis)
    snr = np.asarray(snr, dtype=float)
    if np.any(snr < 0):
        raise ValueError("SNR weights must be non-negative")
    if snr.ndim != axis + 1:
        raise ValueError("SNR array must index the leading axes up to the AP axis")
    w = snr / snr.sum(axis=-1, keepdims=True)
    w = w.reshape(w.shape + (1,) * (llrs.ndim - w.ndim))
    return (llrs * w).sum(axis=axis)


@dataclass(frozen=True)
class ReceiverChain:
    """A per-AP classical chain followed by central fusion."""

    estimator: str = "ls"  # "ls" | "lmmse" | "perfect"
    equalizer: str = "zf"  # "zf" | "mmse"
    fusion: str = "sum"  # "sum" | "snr"

    def per_ap_llrs(self, y, sigma2, mask: PilotMask, spec: ConstellationSpec,
                    h_true=None, cov: ChannelCovariance | None = None) -> np.ndarray:
        if self.estimator == "perfect":
            if h_true is None:
                raise ValueError("perfect-CSI chain needs the true channel")
            return perfect_csi_llr(y, h_true, sigma2, mask, spec)
        if self.estimator == "ls":
            est = ls_estimate(y, mask, sigma2)
        elif self.estimator == "lmmse":
            if cov is None:
                raise ValueError("LMMSE chain needs a channel covariance")
            est = lmmse_estimate(y, mask, cov, sigma2)
        else:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        xhat, nv = equalize(y, est, sigma2, self.equalizer)
        if self.equalizer == "mmse":
            # remove the per-RE MMSE bias before demapping against the unit-gain constellation
            mag2 = np.maximum(np.abs(est.h) ** 2, H_FLOOR ** 2)
            bias = mag2 / (mag2 + _sigma_grid(sigma2, y.shape[:-2]))
            xhat, nv = xhat / bias, nv / bias ** 2
        return demap_equalized(xhat, nv, est, mask, spec)

    def llrs(self, y, sigma2, mask, spec, h_true=None, cov=None) -> np.ndarray:
        """(B, R, n_c, n_s) grids -> fused (B, n_data * m) LLRs."""
        per_ap = self.per_ap_llrs(y, sigma2, mask, spec, h_true=h_true, cov=cov)
        snr = 1.0 / np.asarray(sigma2, dtype=float)
        return fuse_llrs(per_ap, FusionPolicy(self.fusion), snr=snr, axis=1)
