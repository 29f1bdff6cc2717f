import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointrx import autodiff as ad
from jointrx.autodiff import Tensor
from jointrx.config import PROFILES
from jointrx.gradcheck import numeric_grad, rel_error
from jointrx.model import (ModelConfig, NeuralReceiver, bmd_loss, bmd_rate, count_params, cross_attention_fuse,
                           data_token_index, embed, encoder_forward, forward, head_forward, init_params, positional_encoding_2d,
                           tokenize)
from jointrx.resource_grid import PilotMask
from jointrx.training import compute_loss

PAPER = ModelConfig()
MICRO = replace(PROFILES["micro"].model_config(2), max_aps=3)


def f64(cfg, seed=0):
    return init_params(cfg, np.random.default_rng(seed), dtype=np.float64)


def randn(rng, *shape):
    return rng.normal(size=shape)


# ---------------------------------------------------------------- config / counts

def test_paper_parameter_count():
    assert 135_000 <= count_params(PAPER) <= 170_000


def test_head_only_parameter_count():
    head = 64 * 128 + 128 + 128 * 6 + 6
    embedding = 3 * 64 + 64
    assert count_params(replace(PAPER, layers=0, fusion=False)) == head + embedding == 9350


def test_doubling_width_scales_matmul_params_by_about_four():
    ratio = count_params(replace(PAPER, d_model=128, ffn_dim=256, head_hidden=256)) / count_params(PAPER)
    assert 3.5 <= ratio <= 4.5


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=30, heads=3)
    with pytest.raises(ValueError):
        ModelConfig(d_model=64, heads=7)
    with pytest.raises(ValueError):
        ModelConfig(anchor="last")


# ---------------------------------------------------------------- inputs

def test_position_code_origin_and_uniqueness():
    pe = positional_encoding_2d(48, 36, 64)
    assert pe.shape == (48, 36, 64)
    np.testing.assert_array_equal(pe[0, 0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 0, 1::2], 1.0)
    flat = pe.reshape(-1, 64)
    d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    assert d2.min() > 1e-6
    assert positional_encoding_2d(48, 36, 64).tobytes() == pe.tobytes()
    with pytest.raises(ValueError):
        positional_encoding_2d(4, 4, 30)


def test_tokenize_examples():
    y = np.zeros((1, 1, 48, 36), complex)
    y[0, 0, 3, 5] = 1 + 2j
    u = tokenize(y, np.array([[0.1]]), PAPER, standardize=False)
    assert u.shape == (1, 1, 1728, 3)
    np.testing.assert_array_equal(u[0, 0, 3 * 36 + 5], [1.0, 2.0, 0.1])
    rest = np.delete(u[0, 0], 3 * 36 + 5, axis=0)
    np.testing.assert_array_equal(rest, np.tile([0.0, 0.0, 0.1], (1727, 1)))
    with pytest.raises(ValueError):
        tokenize(np.zeros((1, 4, 4, 4)), np.ones((1, 4)), PAPER)


def test_best_anchor_moves_strongest_ap_first():
    cfg = replace(MICRO, anchor="best")
    y = np.stack([np.full((4, 4), k, complex) for k in range(3)])[None]
    u = tokenize(y, np.array([[0.5, 0.1, 0.9]]), cfg, standardize=False)
    assert u[0, 0, 0, 0] == 1 and u[0, 0, 0, 2] == 0.1


# ---------------------------------------------------------------- encoder

def test_shared_encoder_on_identical_inputs_is_bitwise_identical():
    rng = np.random.default_rng(0)
    rx = NeuralReceiver.initialise(MICRO, PilotMask.columns(6, 6, (1,)), rng)
    one = randn(rng, 1, 1, 6, 6) + 1j * randn(rng, 1, 1, 6, 6)
    u = tokenize(np.repeat(one, 3, axis=1), np.full((1, 3), 0.2), MICRO)
    z = embed(Tensor(u.astype(np.float32)), rx.params, rx.posenc.reshape(36, -1).astype(np.float32))
    out = encoder_forward(z.reshape(3, 36, MICRO.d_model), rx.params, MICRO).data
    assert out[0].tobytes() == out[1].tobytes() == out[2].tobytes()


def test_encoder_permutation_equivariance():
    rng = np.random.default_rng(1)
    p = f64(MICRO)
    z = Tensor(randn(rng, 3, 10, MICRO.d_model))
    out = encoder_forward(z, p, MICRO).data
    perm = [2, 0, 1]
    np.testing.assert_array_equal(encoder_forward(Tensor(z.data[perm]), p, MICRO).data, out[perm])


def test_zero_layer_encoder_is_identity():
    cfg = replace(MICRO, layers=0)
    z = Tensor(np.random.default_rng(2).normal(size=(2, 5, cfg.d_model)))
    assert encoder_forward(z, f64(cfg), cfg) is z


def test_attention_rows_are_stochastic():
    rng = np.random.default_rng(3)
    p = f64(MICRO)
    trace = []
    forward(p, randn(rng, 2, 3, 16, 3), MICRO, positional_encoding_2d(4, 4, MICRO.d_model), trace)
    assert len(trace) == MICRO.layers + 1
    for attn in trace:
        np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-5)


# ---------------------------------------------------------------- fusion

def _fuse(params, z, cfg):
    return cross_attention_fuse(Tensor(z), params, cfg).data


def test_fusion_invariant_to_non_anchor_permutation():
    rng = np.random.default_rng(4)
    p = f64(MICRO)
    z = randn(rng, 2, 3, 7, MICRO.d_model)
    out = _fuse(p, z, MICRO)
    assert np.max(np.abs(_fuse(p, z[:, [0, 2, 1]], MICRO) - out)) <= 1e-6
    assert np.max(np.abs(_fuse(p, z[:, [1, 0, 2]], MICRO) - out)) > 1e-3


def test_single_ap_fusion_formula():
    rng = np.random.default_rng(5)
    p = f64(MICRO, seed=3)
    for k in ("fuse.ln.g", "fuse.ln.b", "fuse.attn.bv", "fuse.attn.bo"):
        p[k] = Tensor(randn(rng, MICRO.d_model))
    z = randn(rng, 2, 1, 5, MICRO.d_model)
    g = lambda k: p[k].data  # noqa: E731
    v = z[:, 0] @ g("fuse.attn.wv") + g("fuse.attn.bv")
    x = z[:, 0] + v @ g("fuse.attn.wo") + g("fuse.attn.bo")
    mu, var = x.mean(-1, keepdims=True), x.var(-1, keepdims=True)
    want = (x - mu) / np.sqrt(var + 1e-5) * g("fuse.ln.g") + g("fuse.ln.b")
    np.testing.assert_allclose(_fuse(p, z, MICRO), want, atol=1e-12)


def test_fusion_matches_scalar_derivation():
    rng = np.random.default_rng(6)
    d = 2
    names = ["wq", "wk", "wv", "wo"]
    W = {n: randn(rng, d, d) for n in names}
    b = {n: randn(rng, d) for n in names}
    g, beta = randn(rng, d), randn(rng, d)
    params = {f"fuse.attn.{n}": Tensor(W[n]) for n in names}
    params.update({f"fuse.attn.b{n[1]}": Tensor(b[n]) for n in names})
    params.update({"fuse.ln.g": Tensor(g), "fuse.ln.b": Tensor(beta)})
    z1, z2 = randn(rng, d), randn(rng, d)

    def lin(x, n):
        return [sum(x[i] * W[n][i][j] for i in range(d)) + b[n][j] for j in range(d)]

    q = lin(z1, "wq")
    keys, vals = [lin(z, "wk") for z in (z1, z2)], [lin(z, "wv") for z in (z1, z2)]
    s = [sum(q[j] * k[j] for j in range(d)) / math.sqrt(d) for k in keys]
    e = [math.exp(si - max(s)) for si in s]
    alpha = [ei / sum(e) for ei in e]
    a = [sum(alpha[r] * vals[r][j] for r in range(2)) for j in range(d)]
    o = lin(a, "wo")
    x = [z1[j] + o[j] for j in range(d)]
    mu = sum(x) / d
    var = sum((xi - mu) ** 2 for xi in x) / d
    want = [(x[j] - mu) / math.sqrt(var + 1e-5) * g[j] + beta[j] for j in range(d)]

    cfg = SimpleNamespace(heads=1, d_head=d)
    got = _fuse(params, np.stack([z1, z2])[None, :, None, :], cfg)[0, 0]
    np.testing.assert_allclose(got, want, atol=1e-9, rtol=0)


def test_fusion_rejects_empty_ap_axis():
    with pytest.raises(ValueError):
        _fuse(f64(MICRO), np.zeros((1, 0, 3, MICRO.d_model)), MICRO)


# ---------------------------------------------------------------- head / output

def test_zero_head_gives_zero_llrs_and_zero_rate():
    p = f64(MICRO)
    for k in ("head.w1", "head.b1", "head.w2", "head.b2"):
        p[k] = Tensor(np.zeros_like(p[k].data))
    out = forward(p, np.random.default_rng(0).normal(size=(1, 2, 16, 3)), MICRO,
                  positional_encoding_2d(4, 4, MICRO.d_model))
    np.testing.assert_array_equal(out.data, 0.0)
    assert bmd_rate(out.data, np.ones(out.data.shape)) == 0.0


def test_head_shape_and_position_independence():
    p = f64(PAPER)
    z = np.random.default_rng(1).normal(size=(1, 48 * 36, 64))
    z[0, 100] = z[0, 7]
    out = head_forward(Tensor(z), p).data.reshape(48, 36, 6)
    assert out.shape == (48, 36, 6)
    np.testing.assert_array_equal(out.reshape(-1, 6)[100], out.reshape(-1, 6)[7])


# ---------------------------------------------------------------- loss

def test_bmd_examples():
    loss, rate = bmd_loss(Tensor(np.zeros(8)), np.array([0, 1] * 4))
    assert loss.data == pytest.approx(1.0, abs=1e-15) and rate.data == pytest.approx(0.0, abs=1e-15)
    c = np.array([0, 1, 1, 0, 1])
    loss, rate = bmd_loss(Tensor(20.0 * (2.0 * c - 1)), c)
    assert loss.data < 1e-8 and rate.data > 1 - 1e-8
    loss, rate = bmd_loss(Tensor(np.array([math.log(3)])), np.array([1]))
    assert abs(loss.data - math.log2(4 / 3)) < 1e-12
    assert abs(rate.data - (1 - math.log2(4 / 3))) < 1e-12
    with pytest.raises(ValueError):
        bmd_loss(Tensor(np.zeros(3)), np.zeros(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2 ** 31))
def test_rate_is_one_minus_loss(n, seed):
    rng = np.random.default_rng(seed)
    llr, bits = rng.normal(scale=8, size=n), rng.integers(0, 2, n)
    loss, rate = bmd_loss(Tensor(llr), bits)
    assert abs(rate.data - (1 - loss.data)) <= 1e-12
    assert abs(bmd_rate(llr, bits) - rate.data) <= 1e-12


# ---------------------------------------------------------------- gradients

def test_full_pipeline_gradient_spot_check(grad_instance):
    rx, y, s2, bits = grad_instance
    for p in rx.params.values():
        p.zero_grad()
    loss, _ = compute_loss(rx, y, s2, bits)
    ad.backward(loss)
    f = lambda: float(compute_loss(rx, y, s2, bits)[0].data)  # noqa: E731
    rng = np.random.default_rng(1)
    for name, p in rx.params.items():
        idx = rng.choice(p.data.size, min(4, p.data.size), replace=False)
        num = numeric_grad(f, p.data, 1e-5, idx)
        assert rel_error(p.grad, num) < 1e-4, name


def test_pilot_tokens_get_no_direct_loss_gradient():
    mask = PilotMask.columns(4, 4, (1,))
    cfg = replace(MICRO, layers=0, fusion=False)
    rx = NeuralReceiver.initialise(cfg, mask, np.random.default_rng(0), dtype=np.float64)
    u = Tensor(np.random.default_rng(1).normal(size=(1, 1, 16, 3)), requires_grad=True)
    z = embed(u, rx.params, rx.posenc.reshape(16, -1))
    logits = head_forward(z[:, 0], rx.params)
    loss, _ = bmd_loss(logits[:, data_token_index(mask), :], np.ones((1, 24)))
    ad.backward(loss)
    pilot_tokens = [f * 4 + 1 for f in range(4)]
    np.testing.assert_array_equal(u.grad[0, 0, pilot_tokens], 0.0)
    assert np.all(np.abs(u.grad[0, 0, [0, 2, 3]]).sum(-1) > 0)


# ---------------------------------------------------------------- inference / persistence

def test_inference_is_deterministic_and_checks_ap_limit(tmp_path):
    mask = PilotMask.columns(6, 6, (1, 4))
    rx = NeuralReceiver.initialise(replace(MICRO, max_aps=2), mask, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    y = randn(rng, 3, 2, 6, 6) + 1j * randn(rng, 3, 2, 6, 6)
    s2 = np.full((3, 2), 0.2)
    a = rx.llrs(y, s2, chunk=2)
    assert a.shape == (3, mask.n_data * 2)
    assert a.tobytes() == rx.llrs(y, s2, chunk=3).tobytes()
    assert np.all(np.abs(a) <= 20.0)
    with pytest.raises(ValueError):
        rx.llrs(np.zeros((1, 3, 6, 6)), np.ones((1, 3)))
    path = tmp_path / "m.ckpt"
    rx.save(path, extra={"note": "x"})
    back, meta, extras = NeuralReceiver.load(path)
    assert meta["note"] == "x" and not extras
    assert back.cfg == rx.cfg
    assert back.llrs(y, s2).tobytes() == a.tobytes()
