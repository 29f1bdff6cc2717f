"""Cross-attention transformer that turns multi-AP received grids into bit LLRs.

Pipeline per frame: every AP grid is tokenized (one token per resource
element carrying Re y, Im y and the AP noise variance), embedded with a 2D
sinusoidal position code, and run through a pre-norm self-attention encoder
whose weights are shared by all APs. At each resource element the anchor
AP's latent queries the latents of all APs; the attended value is added back
to the anchor latent and layer-normalised. A two-layer MLP maps the fused
latent to m LLRs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import MultiApObservation
from .resource_grid import PilotMask

LLR_CLAMP = 20.0


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 8
    layers: int = 4
    ffn_dim: int = 128
    head_hidden: int = 128
    bits_per_symbol: int = 6
    max_aps: int = 3
    fusion: bool = True
    anchor: str = "first"  # "first" | "best" (highest-SNR AP becomes the anchor)
    noise_feature: str = "linear"  # "linear" | "db"
    noise_shift: float = 0.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 for the 2D position code")
        if self.anchor not in ("first", "best"):
            raise ValueError(f"unknown anchor rule {self.anchor!r}")
        if self.noise_feature not in ("linear", "db"):
            raise ValueError(f"unknown noise feature {self.noise_feature!r}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def with_noise_standardization(self, sigma2_samples: np.ndarray) -> "ModelConfig":
        """Fix the affine map applied to the noise-variance feature."""
        v = _noise_raw(np.asarray(sigma2_samples, dtype=float), self.noise_feature)
        return replace(self, noise_shift=float(v.mean()), noise_scale=float(max(v.std(), 1e-12)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _noise_raw(sigma2: np.ndarray, mode: str) -> np.ndarray:
    return sigma2 if mode == "linear" else 10 * np.log10(sigma2)


# ---------------------------------------------------------------------------
# parameters

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, m = cfg.d_model, cfg.ffn_dim, cfg.bits_per_symbol
    shapes: dict[str, tuple[int, ...]] = {"embed.w": (3, d), "embed.b": (d,)}

    def attention(prefix):
        for p in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{p}"] = (d, d)
            shapes[f"{prefix}.b{p}"] = (d,)

    def norm(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    for i in range(cfg.layers):
        norm(f"enc{i}.ln1")
        attention(f"enc{i}.attn")
        norm(f"enc{i}.ln2")
        shapes[f"enc{i}.ffn.w1"] = (d, f)
        shapes[f"enc{i}.ffn.b1"] = (f,)
        shapes[f"enc{i}.ffn.w2"] = (f, d)
        shapes[f"enc{i}.ffn.b2"] = (d,)
    if cfg.fusion:
        attention("fuse.attn")
        norm("fuse.ln")
    shapes["head.w1"] = (d, cfg.head_hidden)
    shapes["head.b1"] = (cfg.head_hidden,)
    shapes["head.w2"] = (cfg.head_hidden, m)
    shapes["head.b2"] = (m,)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases 0; norm gains 1."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            bound = 1.0 / math.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        elif leaf == "g":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


def params_to_arrays(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}


def params_from_arrays(arrays: dict[str, np.ndarray], dtype=np.float32) -> dict[str, Tensor]:
    return {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=True) for k, v in arrays.items()}


# ---------------------------------------------------------------------------
# inputs

def positional_encoding_2d(n_subcarriers: int, n_symbols: int, d_model: int) -> np.ndarray:
    """(n_c, n_s, d_model): first half encodes the subcarrier, second half the symbol.

    Each half is a standard 1D sinusoidal code with interleaved sin/cos pairs
    and geometrically spaced wavelengths from 2*pi up to 10^4 * 2*pi.
    """
    if d_model % 4:
        raise ValueError("d_model must be divisible by 4")
    half = d_model // 2

    def one_d(n):
        pos = np.arange(n)[:, None]
        freq = 1.0 / (10000.0 ** (np.arange(0, half, 2) / half))
        enc = np.zeros((n, half))
        enc[:, 0::2] = np.sin(pos * freq)
        enc[:, 1::2] = np.cos(pos * freq)
        return enc

    pf = one_d(n_subcarriers)[:, None, :]
    pt = one_d(n_symbols)[None, :, :]
    return np.concatenate([np.broadcast_to(pf, (n_subcarriers, n_symbols, half)),
                           np.broadcast_to(pt, (n_subcarriers, n_symbols, half))], axis=-1)


def anchor_order(sigma2: np.ndarray, rule: str) -> np.ndarray:
    """Per-frame AP permutation putting the anchor first."""
    B, R = sigma2.shape
    if rule == "first":
        return np.broadcast_to(np.arange(R), (B, R))
    best = np.argmin(sigma2, axis=1)
    order = np.broadcast_to(np.arange(R), (B, R)).copy()
    order[np.arange(B), 0] = best
    order[np.arange(B), best] = 0
    return order


def tokenize(y: np.ndarray, sigma2: np.ndarray, cfg: ModelConfig, standardize: bool = True) -> np.ndarray:
    """(B, R, n_c, n_s) grids and (B, R) noise variances -> (B, R, n_c*n_s, 3) raw tokens.

    Token t = f * n_s + s carries [Re y, Im y, noise feature]. With
    ``standardize=False`` the third entry is the plain noise variance.
    """
    y = np.asarray(y)
    sigma2 = np.asarray(sigma2, dtype=float)
    B, R, n_c, n_s = y.shape
    if R > cfg.max_aps:
        raise ValueError(f"{R} APs exceed the model limit of {cfg.max_aps}")
    order = anchor_order(sigma2, cfg.anchor)
    y = np.take_along_axis(y, order[:, :, None, None], axis=1)
    sigma2 = np.take_along_axis(sigma2, order, axis=1)
    if standardize:
        noise = (_noise_raw(sigma2, cfg.noise_feature) - cfg.noise_shift) / cfg.noise_scale
    else:
        noise = sigma2
    u = np.empty((B, R, n_c * n_s, 3))
    flat = y.reshape(B, R, n_c * n_s)
    u[..., 0] = flat.real
    u[..., 1] = flat.imag
    u[..., 2] = noise[:, :, None]
    return u


# ---------------------------------------------------------------------------
# forward pass

def _linear(x: Tensor, params, prefix: str, w: str = "w", b: str = "b") -> Tensor:
    return ad.matmul(x, params[f"{prefix}.{w}"]) + params[f"{prefix}.{b}"]


def _ln(x: Tensor, params, prefix: str) -> Tensor:
    return ad.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def self_attention(x: Tensor, params, prefix: str, heads: int, trace: list | None = None) -> Tensor:
    N, T, d = x.shape
    dh = d // heads

    def split(p):
        return _linear(x, params, prefix, f"w{p}", f"b{p}").reshape(N, T, heads, dh).transpose(0, 2, 1, 3)

    q, k, v = split("q"), split("k"), split("v")
    scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    attn = ad.softmax_rows(scores)
    if trace is not None:
        trace.append(attn.data)
    out = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(N, T, d)
    return _linear(out, params, prefix, "wo", "bo")


def feed_forward(x: Tensor, params, prefix: str) -> Tensor:
    return _linear(ad.relu(_linear(x, params, prefix, "w1", "b1")), params, prefix, "w2", "b2")


def embed(u: Tensor, params, posenc: np.ndarray) -> Tensor:
    """z0 = W_e u + b + position code; posenc is (T, d)."""
    return _linear(u, params, "embed") + posenc


def encoder_forward(z: Tensor, params, cfg: ModelConfig, trace: list | None = None) -> Tensor:
    """Shared pre-norm encoder over (N, T, d) token sequences."""
    for i in range(cfg.layers):
        z = z + self_attention(_ln(z, params, f"enc{i}.ln1"), params, f"enc{i}.attn", cfg.heads, trace)
        z = z + feed_forward(_ln(z, params, f"enc{i}.ln2"), params, f"enc{i}.ffn")
    return z


def cross_attention_fuse(z: Tensor, params, cfg: ModelConfig, trace: list | None = None) -> Tensor:
    """(B, R, T, d) per-AP latents -> (B, T, d) fused latents; AP 0 is the anchor."""
    B, R, T, d = z.shape
    if R < 1:
        raise ValueError("cross-attention needs at least one AP")
    H, dh = cfg.heads, cfg.d_head
    anchor = z[:, 0]
    q = _linear(anchor, params, "fuse.attn", "wq", "bq").reshape(B, T, H, 1, dh)

    def kv(p):
        return _linear(z, params, "fuse.attn", f"w{p}", f"b{p}").reshape(B, R, T, H, dh).transpose(0, 2, 3, 1, 4)

    k, v = kv("k"), kv("v")
    scores = ad.matmul(q, k.transpose(0, 1, 2, 4, 3)) * (1.0 / math.sqrt(dh))  # (B, T, H, 1, R)
    attn = ad.softmax_rows(scores)
    if trace is not None:
        trace.append(attn.data)
    a = ad.matmul(attn, v).reshape(B, T, d)
    a = _linear(a, params, "fuse.attn", "wo", "bo")
    return _ln(anchor + a, params, "fuse.ln")


def head_forward(fused: Tensor, params) -> Tensor:
    return feed_forward(fused, params, "head")


def forward(params, u: np.ndarray, cfg: ModelConfig, posenc: np.ndarray,
            trace: list | None = None) -> Tensor:
    """Raw tokens (B, R, T, 3) -> LLR logits (B, T, m) for every RE."""
    dtype = params["embed.w"].dtype
    B, R, T, _ = u.shape
    z = embed(Tensor(np.asarray(u, dtype=dtype)), params, posenc.reshape(T, -1).astype(dtype))
    z = encoder_forward(z.reshape(B * R, T, cfg.d_model), params, cfg, trace)
    z = z.reshape(B, R, T, cfg.d_model)
    fused = cross_attention_fuse(z, params, cfg, trace) if cfg.fusion else z[:, 0]
    return head_forward(fused, params)


def data_token_index(mask: PilotMask) -> np.ndarray:
    f, t = mask.data_index
    return f * mask.shape[1] + t


# ---------------------------------------------------------------------------
# objective

def bmd_loss(llrs: Tensor, bits: np.ndarray) -> tuple[Tensor, Tensor]:
    """Normalised BCE in bits and the matching BMD rate ``1 - loss``.

    ``llrs`` and ``bits`` must have the same number of entries; the sign
    convention is log p(1)/p(0) so s = 2c - 1 and each bit contributes
    softplus(-s L) / ln 2.
    """
    bits = np.asarray(bits)
    if bits.size != llrs.data.size:
        raise ValueError(f"{bits.size} bits vs {llrs.data.size} LLRs")
    s = (2.0 * bits.reshape(llrs.shape) - 1.0).astype(llrs.dtype)
    n = bits.size
    loss = ad.softplus(llrs * (-s)).sum() * (1.0 / (n * math.log(2.0)))
    rate = 1.0 - loss
    return loss, rate


def bmd_rate(llrs: np.ndarray, bits: np.ndarray) -> float:
    """Plain numpy BMD rate for evaluation."""
    llrs = np.asarray(llrs, dtype=float)
    s = 2.0 * np.asarray(bits, dtype=float).reshape(llrs.shape) - 1.0
    x = -s * llrs
    sp = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return float(1.0 - sp.sum() / (llrs.size * math.log(2.0)))


# ---------------------------------------------------------------------------
# model bundle

@dataclass
class NeuralReceiver:
    cfg: ModelConfig
    params: dict[str, Tensor]
    mask: PilotMask
    _posenc: np.ndarray | None = field(default=None, repr=False)

    @property
    def posenc(self) -> np.ndarray:
        if self._posenc is None:
            n_c, n_s = self.mask.shape
            self._posenc = positional_encoding_2d(n_c, n_s, self.cfg.d_model)
        return self._posenc

    @classmethod
    def initialise(cls, cfg: ModelConfig, mask: PilotMask, rng: np.random.Generator,
                   dtype=np.float32) -> "NeuralReceiver":
        return cls(cfg, init_params(cfg, rng, dtype), mask)

    def logits(self, y, sigma2, trace=None) -> Tensor:
        u = tokenize(y, sigma2, self.cfg)
        return forward(self.params, u, self.cfg, self.posenc, trace)

    def infer_llrs(self, obs: MultiApObservation, chunk: int = 8) -> np.ndarray:
        """Decoder-ready LLRs (B, n_data * m), clamped to +-20."""
        return self.llrs(obs.y, obs.sigma2, chunk)

    def llrs(self, y, sigma2, chunk: int = 8) -> np.ndarray:
        y = np.asarray(y)
        sigma2 = np.asarray(sigma2, dtype=float)
        if y.shape[1] > self.cfg.max_aps:
            raise ValueError(f"{y.shape[1]} APs exceed the trained maximum of {self.cfg.max_aps}")
        idx = data_token_index(self.mask)
        out = []
        for s in range(0, y.shape[0], chunk):
            logit = self.logits(y[s:s + chunk], sigma2[s:s + chunk]).data
            out.append(logit[:, idx, :].reshape(logit.shape[0], -1))
        return np.clip(np.concatenate(out, axis=0).astype(np.float64), -LLR_CLAMP, LLR_CLAMP)

    def save(self, path: str | Path, extra: dict | None = None,
             extra_tensors: dict[str, np.ndarray] | None = None) -> None:
        meta = {"model": asdict(self.cfg),
                "pilot_cols": self.mask.pilot_cols.tolist(),
                "grid": list(self.mask.shape)}
        if extra:
            meta.update(extra)
        tensors = params_to_arrays(self.params)
        if extra_tensors:
            tensors.update(extra_tensors)
        ad.save_tensors(path, tensors, json.dumps(meta, sort_keys=True).encode())

    @classmethod
    def load(cls, path: str | Path) -> tuple["NeuralReceiver", dict, dict[str, np.ndarray]]:
        tensors, raw = ad.load_tensors(path)
        meta = json.loads(raw.decode())
        cfg = ModelConfig.from_dict(meta["model"])
        n_c, n_s = meta["grid"]
        mask = PilotMask.columns(n_c, n_s, meta["pilot_cols"])
        names = param_shapes(cfg)
        params = params_from_arrays({k: tensors[k] for k in names})
        extras = {k: v for k, v in tensors.items() if k not in names}
        return cls(cfg, params, mask), meta, extras
