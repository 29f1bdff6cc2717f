from dataclasses import replace

import numpy as np
import pytest

from jointrx import autodiff as ad
from jointrx.config import PROFILES
from jointrx.model import NeuralReceiver
from jointrx.resource_grid import PilotMask
from jointrx.training import compute_loss


def relu_margin(fn) -> float:
    """Smallest |pre-activation| seen by any ReLU while running ``fn``."""
    seen = []
    orig = ad.relu

    def spy(x):
        seen.append(np.abs(x.data).min())
        return orig(x)

    ad.relu = spy
    try:
        fn()
    finally:
        ad.relu = orig
    return min(seen) if seen else np.inf


def gradcheck_instance(margin: float = 2e-4, max_tries: int = 200):
    """A float64 micro model on a 4x4 grid, two APs, whose ReLUs all sit at
    least ``margin`` away from their kink (finite differences are then valid)."""
    cfg = replace(PROFILES["micro"].model_config(1), max_aps=2)
    mask = PilotMask.columns(4, 4, (1,))
    for seed in range(max_tries):
        rng = np.random.default_rng(seed)
        rx = NeuralReceiver.initialise(cfg, mask, rng, dtype=np.float64)
        y = rng.normal(size=(1, 2, 4, 4)) + 1j * rng.normal(size=(1, 2, 4, 4))
        s2 = np.array([[0.3, 0.7]])
        bits = rng.integers(0, 2, (1, mask.n_data * cfg.bits_per_symbol))
        if relu_margin(lambda: compute_loss(rx, y, s2, bits)) >= margin:
            return rx, y, s2, bits
    raise RuntimeError("no kink-free instance found")


@pytest.fixture(scope="session")
def grad_instance():
    return gradcheck_instance()
