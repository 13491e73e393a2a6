"""Bidirectional transformer encoder producing per-timestep Gaussian latents.

The encoder attends over all real cells of a padded batch (padding never
contributes), and affine heads map each hidden state to a per-timestep
(mu, logvar) pair.  Latent sampling uses the reparameterization
z = mu + multiplier * sigma * eps, where the multiplier is the knob that
trades reconstruction fidelity against privacy at generation time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import PaddedBatch
from .errors import ContractError, DomainError
from .layers import TransformerBlock, padding_attn_bias, temporal_encode, xavier_uniform


@dataclass
class LatentCode:
    """Sampled latent grid for one batch, kept as plain arrays."""

    mu: np.ndarray           # (B, Lmax, d_z)
    logvar: np.ndarray       # (B, Lmax, d_z)
    z: np.ndarray            # (B, Lmax, d_z); zero on padded rows
    var_multiplier: float
    mask: np.ndarray         # (B, Lmax) real-cell mask


class Encoder:
    def __init__(self, n_types: int, d: int, d_z: int, n_layers: int, n_heads: int,
                 d_ff: int, rng: np.random.Generator):
        self.d = d
        self.d_z = d_z
        self.n_types = n_types
        # rows: K real types, END, PAD
        self.embed = ad.parameter(rng.normal(0.0, 0.02, size=(n_types + 2, d)), "enc.embed")
        self.blocks = [
            TransformerBlock(rng, d, d_ff, n_heads, f"enc.block{i}") for i in range(n_layers)
        ]
        self.w_mu = ad.parameter(xavier_uniform(rng, (d, d_z)), "enc.w_mu")
        self.b_mu = ad.parameter(np.zeros(d_z), "enc.b_mu")
        self.w_logvar = ad.parameter(xavier_uniform(rng, (d, d_z)), "enc.w_logvar")
        self.b_logvar = ad.parameter(np.zeros(d_z), "enc.b_logvar")

    def params(self) -> dict:
        out = {self.embed.name: self.embed, self.w_mu.name: self.w_mu, self.b_mu.name: self.b_mu,
               self.w_logvar.name: self.w_logvar, self.b_logvar.name: self.b_logvar}
        for b in self.blocks:
            out.update(b.params())
        return out

    def encode(self, batch: PaddedBatch, dropout_rate: float = 0.0, rng=None):
        """Hidden states (B, Lmax, d); padded rows are exactly zero."""
        if batch.types.max(initial=0) >= self.embed.shape[0]:
            raise ContractError("type index out of range for embedding table")
        real = batch.mask
        pad_mult = real[:, :, None].astype(np.float64)
        x = ad.add(self.embed[batch.types], temporal_encode(batch.times, self.d))
        x = ad.mul(x, pad_mult)
        bias = padding_attn_bias(real)
        for block in self.blocks:
            x = block(x, bias, pad_mult, dropout_rate, rng)
        return x

    def latent_params(self, hidden):
        """Per-timestep affine heads: (mu, logvar), each (B, Lmax, d_z)."""
        mu = ad.add(hidden @ self.w_mu, self.b_mu)
        logvar = ad.add(hidden @ self.w_logvar, self.b_logvar)
        return mu, logvar


def sample_z(mu, logvar, var_multiplier: float, mask: np.ndarray, rng=None, eps=None):
    """Reparameterized draw z = mu + multiplier * exp(logvar/2) * eps.

    `eps` may be passed explicitly (frozen draws); otherwise it comes from
    `rng`.  Padded rows are zeroed.  multiplier 0 returns exactly mu on
    real rows, making the whole pipeline deterministic.
    """
    if var_multiplier < 0:
        raise DomainError("var_multiplier must be >= 0")
    mask3 = mask[:, :, None].astype(np.float64)
    if var_multiplier == 0.0:
        return ad.mul(mu, mask3)
    if eps is None:
        if rng is None:
            raise DomainError("sample_z needs rng or eps when var_multiplier > 0")
        eps = rng.standard_normal(size=mu.shape)
    sigma = ad.exp(ad.mul(logvar, 0.5))
    z = ad.add(mu, ad.mul(ad.mul(sigma, eps), var_multiplier))
    return ad.mul(z, mask3)


def kl_divergence(mu, logvar, mask: np.ndarray):
    """Mean over real cells of KL(N(mu, sigma^2) || N(0, 1)) summed over d_z."""
    mask3 = mask[:, :, None].astype(np.float64)
    var = ad.exp(logvar)
    per_dim = ad.mul(ad.sub(ad.add(ad.mul(mu, mu), var), ad.add(logvar, 1.0)), 0.5)
    total = ad.sum_(ad.mul(per_dim, mask3))
    n_real = float(mask.sum())
    return ad.mul(total, 1.0 / max(n_real, 1.0))
