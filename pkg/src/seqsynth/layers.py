"""Shared transformer machinery used by both the encoder and the decoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError

ATTN_MASK_VALUE = -1e9
LAYER_NORM_EPS = 1e-6


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def temporal_encode(times: np.ndarray, d: int) -> np.ndarray:
    """Deterministic sinusoidal encoding of raw timestamps.

    Dimension 2i carries sin(t / 10000^(2i/d)), dimension 2i+1 the
    matching cosine, so t=0 encodes to [0, 1, 0, 1, ...].
    """
    if d % 2 != 0:
        raise ConfigError("temporal encoding width must be even")
    times = np.asarray(times, dtype=np.float64)
    i = np.arange(d)
    divisor = np.power(10000.0, (2 * (i // 2)) / d)
    angles = times[..., None] / divisor
    out = np.empty(times.shape + (d,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles[..., 0::2])
    out[..., 1::2] = np.cos(angles[..., 1::2])
    return out


class TransformerBlock:
    """Post-norm block: LN(x + MHA(x)) then LN(x + FF(x)), GELU feed-forward."""

    def __init__(self, rng: np.random.Generator, d: int, d_ff: int, n_heads: int, prefix: str):
        if d % n_heads != 0:
            raise ConfigError(f"d={d} not divisible by n_heads={n_heads}")
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        p = ad.parameter
        self.wq = p(xavier_uniform(rng, (d, d)), f"{prefix}.wq")
        self.wk = p(xavier_uniform(rng, (d, d)), f"{prefix}.wk")
        self.wv = p(xavier_uniform(rng, (d, d)), f"{prefix}.wv")
        self.wo = p(xavier_uniform(rng, (d, d)), f"{prefix}.wo")
        self.bq = p(np.zeros(d), f"{prefix}.bq")
        self.bk = p(np.zeros(d), f"{prefix}.bk")
        self.bv = p(np.zeros(d), f"{prefix}.bv")
        self.bo = p(np.zeros(d), f"{prefix}.bo")
        self.ln1_g = p(np.ones(d), f"{prefix}.ln1_g")
        self.ln1_b = p(np.zeros(d), f"{prefix}.ln1_b")
        self.w1 = p(xavier_uniform(rng, (d, d_ff)), f"{prefix}.w1")
        self.b1 = p(np.zeros(d_ff), f"{prefix}.b1")
        self.w2 = p(xavier_uniform(rng, (d_ff, d)), f"{prefix}.w2")
        self.b2 = p(np.zeros(d), f"{prefix}.b2")
        self.ln2_g = p(np.ones(d), f"{prefix}.ln2_g")
        self.ln2_b = p(np.zeros(d), f"{prefix}.ln2_b")

    def params(self) -> dict:
        return {t.name: t for t in (
            self.wq, self.wk, self.wv, self.wo, self.bq, self.bk, self.bv, self.bo,
            self.ln1_g, self.ln1_b, self.w1, self.b1, self.w2, self.b2,
            self.ln2_g, self.ln2_b,
        )}

    def _attention(self, x, attn_bias: np.ndarray):
        B, L, d = x.shape
        H, dh = self.n_heads, self.d_head

        def heads(t):
            return ad.transpose(ad.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

        q = heads(ad.add(x @ self.wq, self.bq))
        k = heads(ad.add(x @ self.wk, self.bk))
        v = heads(ad.add(x @ self.wv, self.bv))
        scores = ad.mul(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / np.sqrt(dh))
        scores = ad.add(scores, attn_bias)
        attn = ad.softmax(scores, axis=-1)
        ctx = attn @ v
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
        return ad.add(ctx @ self.wo, self.bo)

    def __call__(self, x, attn_bias: np.ndarray, pad_mult: np.ndarray,
                 dropout_rate: float = 0.0, rng: np.random.Generator = None):
        h = self._attention(x, attn_bias)
        h = _dropout(h, dropout_rate, rng)
        x = layer_norm(ad.add(x, h), self.ln1_g, self.ln1_b)
        x = ad.mul(x, pad_mult)
        f = ad.add(ad.gelu(ad.add(x @ self.w1, self.b1)) @ self.w2, self.b2)
        f = _dropout(f, dropout_rate, rng)
        x = layer_norm(ad.add(x, f), self.ln2_g, self.ln2_b)
        return ad.mul(x, pad_mult)


def layer_norm(x, gain, bias):
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = ad.sub(x, mu)
    var = ad.mean(ad.mul(xc, xc), axis=-1, keepdims=True)
    xhat = ad.div(xc, ad.sqrt(ad.add(var, LAYER_NORM_EPS)))
    return ad.add(ad.mul(xhat, gain), bias)


def _dropout(x, rate: float, rng):
    if rate <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout requires an RNG stream")
    keep = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, keep)


def padding_attn_bias(key_real: np.ndarray) -> np.ndarray:
    """Additive bias (B, 1, 1, L): masked keys get a large negative score."""
    B, L = key_real.shape
    return np.where(key_real, 0.0, ATTN_MASK_VALUE)[:, None, None, :]


def causal_attn_bias(key_real: np.ndarray) -> np.ndarray:
    """Additive bias (B, 1, L, L): position i may attend to real keys j <= i."""
    B, L = key_real.shape
    allowed = np.tril(np.ones((L, L), dtype=bool))[None, :, :] & key_real[:, None, :]
    return np.where(allowed, 0.0, ATTN_MASK_VALUE)[:, None, :, :]
