"""Central finite-difference gradients, used to check reverse-mode results."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5,
                 indices=None) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place.

    ``indices`` restricts the probe to a subset of flat positions; other
    entries of the result are NaN.
    """
    flat = arr.reshape(-1)
    out = np.full(flat.shape, np.nan)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(arr.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst probed |a - n| relative to the gradient scale of the tensor.

    The scale is the largest magnitude in either gradient, bounded below by
    ``floor`` so that identically-zero gradients (e.g. attention key biases)
    compare against finite-difference round-off sensibly.
    """
    a = np.asarray(analytic, dtype=float).reshape(-1)
    n = np.asarray(numeric, dtype=float).reshape(-1)
    ok = ~np.isnan(n)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n[ok]).max(initial=0.0), floor)
    return float(np.abs(a[ok] - n[ok]).max(initial=0.0) / scale)


def directional_error(f: Callable[[], float], arr: np.ndarray, analytic: np.ndarray,
                      rng: np.random.Generator, eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Compare grad . v with a central difference of f along a random unit direction v."""
    v = rng.standard_normal(arr.shape)
    v /= np.linalg.norm(v)
    base = arr.copy()
    arr += eps * v
    fp = f()
    arr[...] = base - eps * v
    fm = f()
    arr[...] = base
    num = (fp - fm) / (2 * eps)
    ana = float(np.sum(analytic * v))
    return abs(ana - num) / max(abs(ana), abs(num), floor)
