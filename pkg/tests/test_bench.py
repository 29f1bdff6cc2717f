import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointrx.bench import (BerCurve, classical_receiver, emit_csv, estimate_flops, kernel_smooth, parse_csv,
                           run_monte_carlo_ber, simulate_point)
from jointrx.classical import ReceiverChain
from jointrx.config import PROFILES
from jointrx.harness import build_receivers
from jointrx.model import ModelConfig

PROF = PROFILES["micro"]
LAYOUT = PROF.layout(2)


def chains(names=("perfect", "ls")):
    return {n: classical_receiver(ReceiverChain(n), LAYOUT) for n in names}


def test_smoothing_constant_curve():
    out = kernel_smooth([0, 2, 4, 6], [3e-3] * 4, [1e5] * 4, 1.0)
    np.testing.assert_allclose(out, 3e-3, rtol=1e-12)


def test_smoothing_narrow_kernel_returns_samples():
    ber = np.array([1e-1, 2e-2, 5e-3, 1e-4])
    out = kernel_smooth([0, 2, 4, 6], ber, [1e6] * 4, 1e-3)
    np.testing.assert_allclose(out, ber, rtol=1e-12)


def test_smoothing_two_point_midpoint():
    val = kernel_smooth([0.0, 2.0], [1e-2, 1e-4], [1e6, 1e6], 1.0, at=1.0)
    assert val[0] == pytest.approx(1e-3, rel=1e-12)


def test_smoothing_floors_zero_errors_and_rejects_bad_input():
    out = kernel_smooth([0.0, 10.0], [1e-2, 0.0], [1e4, 1e4], 1e-3)
    assert out[1] == pytest.approx(1 / 2e4)
    with pytest.raises(ValueError):
        kernel_smooth([], [], [], 1.0)
    with pytest.raises(ValueError):
        kernel_smooth([0, 1], [0.1, 0.1], [10, 10], 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 3.0), min_size=2, max_size=12), st.floats(-7, -0.5),
       st.floats(0.2, 5.0), st.booleans())
def test_smoothing_preserves_monotone_trend(steps, start, bw, falling):
    x = np.cumsum([0.0] + [1.0] * (len(steps) - 1))
    logb = start - np.cumsum([0.0] + steps[1:]) if falling else start + np.cumsum([0.0] + steps[1:]) * 0.05
    logb = np.minimum(logb, -0.31)
    out = np.log10(kernel_smooth(x, 10 ** logb, [1e12] * len(x), bw))
    d = np.diff(out)
    assert np.all(d <= 1e-12) if falling else np.all(d >= -1e-12)


def curve(**kw):
    base = dict(receiver="ls", n_ap=1, pilot_cols=2, ebn0_db=np.array([0.0, 2.0]), ber=np.array([0.1, 0.01]),
                bits=np.array([100, 100]), errors=np.array([10, 1]), per_seed=np.array([[0.1, 0.01]]),
                stderr=np.array([0.01, 0.001]), realized_ebn0_db=np.array([0.0, 2.0]),
                smoothed=np.array([0.1, 0.01]), meta={"seeds": [0], "config_hash": "abc"})
    base.update(kw)
    return BerCurve(**base)


def test_curve_validation():
    with pytest.raises(ValueError):
        curve(ber=np.array([0.1, 1.5]))
    with pytest.raises(ValueError):
        curve(bits=np.array([100, 0]))
    assert curve().key == "ls_nap1_p2"


def test_csv_roundtrip_and_traceability(tmp_path):
    c = run_monte_carlo_ber(chains(("perfect",)), LAYOUT, PROF.scenario, PROF.channel, [0.0, 4.0], 1,
                            iterations=3, frames=1, seeds=[0, 1], pilot_cols=2, meta={"config_hash": "h0"})[0]
    files = emit_csv([c], tmp_path, {"seeds": [0, 1]})
    back = parse_csv(files[0])
    for name in ("ebn0_db", "ber", "bits", "errors", "per_seed", "stderr", "realized_ebn0_db", "smoothed"):
        np.testing.assert_array_equal(getattr(back, name), getattr(c, name))
    assert (back.receiver, back.n_ap, back.pilot_cols) == (c.receiver, c.n_ap, c.pilot_cols)
    assert back.meta == json.loads(json.dumps(c.meta))
    header = files[0].read_text().splitlines()[0].split(",")
    assert "config_hash" in header and "seeds" in header
    assert json.loads((tmp_path / "manifest.json").read_text())["files"] == [files[0].name]


def test_empty_curve_set_writes_manifest_only(tmp_path):
    assert emit_csv([], tmp_path, {"note": 1}) == []
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]


def test_unwritable_path_is_reported(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        emit_csv([curve()], blocker / "sub", {})


def test_repeat_runs_write_identical_bytes(tmp_path):
    def go(d):
        cs = run_monte_carlo_ber(chains(), LAYOUT, PROF.scenario, PROF.channel, [2.0, 6.0], 2,
                                 iterations=2, frames=1, seeds=[3], pilot_cols=2)
        return emit_csv(cs, tmp_path / d, {"x": 1})

    for a, b in zip(go("a"), go("b")):
        assert a.read_bytes() == b.read_bytes()


def test_zero_noise_gives_zero_ber():
    recv = {n: classical_receiver(ReceiverChain(n), LAYOUT) for n in ("perfect", "ls")}
    res = simulate_point(recv, LAYOUT, PROF.scenario, PROF.channel, 0.0, iterations=3, frames=2, seed=0,
                         zero_noise=True)
    for r in res.values():
        assert r.errors.sum() == 0


def test_stderr_halves_when_iterations_double():
    recv = chains(("perfect",))
    ratios = []
    for seed in range(4):
        se = [run_monte_carlo_ber(recv, LAYOUT, PROF.scenario, PROF.channel, [4.0], 1, iterations=n,
                                  frames=1, seeds=[seed], pilot_cols=2, uncoded=True)[0].stderr[0]
              for n in (100, 200)]
        ratios.append(se[0] / se[1])
    assert 1.35 <= float(np.mean(ratios)) <= 1.65


@pytest.mark.slow
def test_receiver_ordering_and_cooperation_gain():
    recv_names = ("perfect", "lmmse", "ls")
    ebn0 = [0.0, 4.0]
    by_nap = {}
    for n_ap in (1, 2):
        recv = build_receivers(PROF, recv_names, 2, n_ap)
        by_nap[n_ap] = {c.receiver: c for c in run_monte_carlo_ber(
            recv, LAYOUT, PROF.scenario, PROF.channel, ebn0, n_ap, iterations=40, frames=2, seeds=[0],
            pilot_cols=2)}
    for cs in by_nap.values():
        for lo, hi in (("perfect", "lmmse"), ("lmmse", "ls")):
            band = cs[lo].ci95() + cs[hi].ci95()
            assert np.all(cs[lo].ber <= cs[hi].ber + band)
    for name in recv_names:
        band = by_nap[1][name].ci95() + by_nap[2][name].ci95()
        assert np.all(by_nap[2][name].ber <= by_nap[1][name].ber + band)


def test_flops_head_only_formula():
    cfg = ModelConfig(layers=0)
    rep = estimate_flops(cfg, 48, 36, 1)
    T = 48 * 36
    assert rep["per_ap"]["embedding"] == T * 3 * 64
    assert rep["head"] == T * (64 * 128 + 128 * 6)
    assert rep["per_ap_total"] == T * 3 * 64
    assert rep["reference_gflops"] == 0.243 and "MAC" in rep["convention"]


def test_flops_encoder_linear_in_ap_count():
    cfg = ModelConfig()
    reps = [estimate_flops(cfg, 48, 36, n) for n in (1, 2, 3)]
    enc = [r["n_ap"] * r["per_ap_total"] for r in reps]
    assert enc[1] == 2 * enc[0] and enc[2] == 3 * enc[0]
    assert all(r["per_ap"] == reps[0]["per_ap"] for r in reps)
    assert math.isclose(reps[0]["total_gflops"], 2 * reps[0]["total_macs"] / 1e9)


def test_neural_receiver_needs_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_receivers(PROF, ["transformer"], 2, 1, checkpoint=tmp_path / "none.ckpt")
    with pytest.raises(FileNotFoundError):
        build_receivers(PROF, ["transformer"], 2, 1)


def test_non_finite_llrs_are_reported_with_seed():
    def broken(obs):
        return np.full((obs.y.shape[0], LAYOUT.capacity), np.nan)

    with pytest.raises(FloatingPointError, match="seed 5"):
        simulate_point({"bad": broken}, LAYOUT, PROF.scenario, PROF.channel, 3.0, 1, 1, seed=5)
