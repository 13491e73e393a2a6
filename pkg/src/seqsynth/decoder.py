"""Causal decoder with Hawkes intensity heads and the Monte-Carlo likelihood.

The decoder consumes a begin-of-sequence slot followed by the (teacher
forced or previously generated) events, with the per-timestep latent
injected additively at every position.  Three heads sit on top of the
hidden states:

* Hawkes intensity: per-type lambda_k(t) = softplus_beta_k(
      alpha_k * (t - t_j) / t_j  +  W_k . h(t_j)  +  mu_k)
  for t in [t_j, t_{j+1}); at an observed event the interpolation term
  vanishes, so lambda there depends on the hidden state alone.
* time regression: next timestamp = current + softplus(affine(h)), which
  keeps generated times strictly increasing.
* type logits over K real types plus END.

The point-process log-likelihood is sum_j log lambda(t_j) minus the
integral of the total intensity from t_1 to t_L; the integral uses the
unbiased Monte-Carlo estimate sum_j (t_j - t_{j-1}) * mean_i lambda(u_i)
with u_i uniform on (t_{j-1}, t_j).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DomainError, HorizonError
from .layers import TransformerBlock, causal_attn_bias, temporal_encode, xavier_uniform

LOG_BETA_MIN = np.log(1e-6)
LOG_BETA_MAX = np.log(1e6)
DEFAULT_INTENSITY_FLOOR = 1e-8


class HawkesHeads:
    """Per-type intensity parameters (W_k rows, alpha_k, mu_k, log beta_k)."""

    def __init__(self, n_types: int, d: int, rng: np.random.Generator):
        self.n_types = n_types
        self.W = ad.parameter(rng.normal(0.0, 0.02, size=(n_types, d)), "dec.hawkes.W")
        self.alpha = ad.parameter(np.full(n_types, -0.1), "dec.hawkes.alpha")
        self.mu_base = ad.parameter(np.zeros(n_types), "dec.hawkes.mu_base")
        self.log_beta = ad.parameter(np.zeros(n_types), "dec.hawkes.log_beta")

    def params(self) -> dict:
        return {t.name: t for t in (self.W, self.alpha, self.mu_base, self.log_beta)}

    def beta(self):
        return ad.exp(ad.clamp(self.log_beta, LOG_BETA_MIN, LOG_BETA_MAX))

    def preactivation(self, hidden):
        """W h + mu per type: hidden (..., d) -> (..., K)."""
        return ad.add(hidden @ ad.transpose(self.W, (1, 0)), self.mu_base)


def intensity_at(t: float, t_j: float, hidden_j: np.ndarray, heads: HawkesHeads) -> np.ndarray:
    """Per-type intensities at t in the interval starting at event time t_j."""
    if t < t_j:
        raise DomainError(f"t={t} precedes the interval start t_j={t_j}")
    if t_j <= 0:
        raise DomainError("interval start must be positive (times are shifted on load)")
    with ad.no_grad():
        beta = heads.beta().data
        pre = heads.W.data @ np.asarray(hidden_j, dtype=np.float64) + heads.mu_base.data
        arg = heads.alpha.data * ((t - t_j) / t_j) + pre
        lam = beta * np.logaddexp(0.0, arg / beta)
    return np.maximum(lam, np.finfo(np.float64).tiny)


def type_probs(lambdas: np.ndarray) -> np.ndarray:
    """Normalize per-type intensities into event-type probabilities."""
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(lambdas <= 0):
        raise ContractError("type_probs requires strictly positive intensities")
    return lambdas / lambdas.sum()


def _ll_core(times: np.ndarray, ev_mask: np.ndarray, hidden, heads: HawkesHeads,
             u_frac: np.ndarray, floor: float):
    """Batched log-likelihood over event cells.

    times/ev_mask: (B, C) raw event grid (END and padding excluded from
    ev_mask); hidden: (B, C, d) Tensor, h(t_c) per cell; u_frac: (B, C-1, N)
    uniforms in [0,1) for the Monte-Carlo interval estimates.
    Returns a (B,) Tensor of per-sequence log-likelihoods.
    """
    evm = ev_mask.astype(np.float64)
    beta = heads.beta()
    base = heads.preactivation(hidden)                      # (B, C, K)

    lam_ev = ad.softplus(base, beta)                        # (B, C, K)
    total_ev = ad.sum_(lam_ev, axis=-1)                     # (B, C)
    event_term = ad.sum_(ad.mul(ad.log(ad.clamp(total_ev, floor, np.inf)), evm), axis=1)

    interval_mask = (ev_mask[:, :-1] & ev_mask[:, 1:]).astype(np.float64)   # (B, C-1)
    t_left = times[:, :-1]
    dt = (times[:, 1:] - t_left) * interval_mask
    t_safe = np.where(interval_mask > 0, t_left, 1.0)
    interp = (dt[:, :, None] * u_frac) / t_safe[:, :, None]                 # (B, C-1, N)
    interp[interval_mask == 0] = 0.0

    base_left = base[:, :-1, :]                                             # (B, C-1, K)
    B, I, N = interp.shape
    arg = ad.add(ad.mul(heads.alpha, interp[:, :, :, None]),
                 ad.reshape(base_left, (B, I, 1, heads.n_types)))
    lam_u = ad.softplus(arg, beta)                                          # (B, I, N, K)
    mean_total = ad.mul(ad.sum_(lam_u, axis=(2, 3)), 1.0 / N)               # (B, I)
    compensator = ad.sum_(ad.mul(mean_total, dt), axis=1)                   # (B,)

    return ad.sub(event_term, compensator)


def hawkes_log_likelihood(times: np.ndarray, hidden, heads: HawkesHeads, n_mc: int,
                          rng: np.random.Generator = None, u_frac: np.ndarray = None,
                          floor: float = DEFAULT_INTENSITY_FLOOR):
    """Single-sequence log-likelihood; `hidden` holds h(t_j) per event row.

    Returns a scalar Tensor (differentiable through `hidden` and the head
    parameters).  Pass `u_frac` to freeze the Monte-Carlo draws across
    repeated evaluations (finite-difference checks)."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ContractError("event times must be strictly increasing")
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1")
    L = len(times)
    if hidden.shape[0] != L:
        raise ContractError("hidden/times length mismatch")
    if u_frac is None:
        if rng is None:
            raise ConfigError("hawkes_log_likelihood needs rng or frozen u_frac")
        u_frac = rng.uniform(size=(1, L - 1, n_mc))
    hidden_b = ad.reshape(hidden, (1,) + tuple(hidden.shape))
    ll = _ll_core(times[None, :], np.ones((1, L), dtype=bool), hidden_b, heads, u_frac, floor)
    return ad.reshape(ll, ())


def mc_compensator(total_intensity_fn, times: np.ndarray, n_mc: int,
                   rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of the integral of an arbitrary (vectorized)
    total-intensity function between the first and last event."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ContractError("event times must be strictly increasing")
    total = 0.0
    for j in range(1, len(times)):
        a, b = times[j - 1], times[j]
        u = a + (b - a) * rng.uniform(size=n_mc)
        total += (b - a) * float(np.mean(total_intensity_fn(u)))
    return total


@dataclass
class QuadratureConfig:
    n_points: int = 4096
    survival_threshold: float = 1e-6
    max_horizon: float = 1e7
    intensity_floor: float = DEFAULT_INTENSITY_FLOOR


def predict_next_time_expectation(hidden_last: np.ndarray, t_last: float,
                                  heads: HawkesHeads, quad: QuadratureConfig = None) -> float:
    """Expected next event time: integral of t * lambda(t) * S(t) from t_last on.

    Composite trapezoid on a geometric grid, truncated once the survival
    function drops below the configured threshold."""
    quad = quad or QuadratureConfig()
    if t_last <= 0:
        raise DomainError("t_last must be positive")
    with ad.no_grad():
        beta = heads.beta().data
        pre = heads.W.data @ np.asarray(hidden_last, dtype=np.float64) + heads.mu_base.data

    def total_intensity(ts):
        arg = heads.alpha.data[None, :] * ((ts[:, None] - t_last) / t_last) + pre[None, :]
        lam = beta[None, :] * np.logaddexp(0.0, arg / beta[None, :])
        return np.maximum(lam.sum(axis=1), quad.intensity_floor)

    from scipy.integrate import cumulative_trapezoid

    horizon = max(2.0 * t_last, t_last + 10.0)
    while True:
        offsets = np.concatenate([[0.0], np.geomspace(1e-9 * horizon, horizon - t_last + 1e-12,
                                                      quad.n_points)])
        ts = t_last + offsets
        lam = total_intensity(ts)
        cum = cumulative_trapezoid(lam, ts, initial=0.0)
        surv = np.exp(-cum)
        if surv[-1] < quad.survival_threshold:
            break
        horizon *= 4.0
        if horizon > quad.max_horizon:
            raise HorizonError(
                f"survival {surv[-1]:.2e} above {quad.survival_threshold} at horizon {quad.max_horizon}"
            )
    return float(np.trapezoid(ts * lam * surv, ts))


class Decoder:
    """Causal transformer over (BOS, e_1, ..., e_L) with latent injection."""

    BOS_OFFSET = 2  # embedding row index = n_types + 2 (after END, PAD)

    def __init__(self, n_types: int, d: int, d_z: int, n_layers: int, n_heads: int,
                 d_ff: int, rng: np.random.Generator):
        self.d = d
        self.n_types = n_types
        # rows: K real types, END, PAD, BOS
        self.embed = ad.parameter(rng.normal(0.0, 0.02, size=(n_types + 3, d)), "dec.embed")
        self.z_w = ad.parameter(xavier_uniform(rng, (d_z, d)), "dec.z_w")
        self.z_b = ad.parameter(np.zeros(d), "dec.z_b")
        self.blocks = [
            TransformerBlock(rng, d, d_ff, n_heads, f"dec.block{i}") for i in range(n_layers)
        ]
        self.hawkes = HawkesHeads(n_types, d, rng)
        self.time_w = ad.parameter(xavier_uniform(rng, (d, 1)), "dec.time_w")
        self.time_b = ad.parameter(np.zeros(1), "dec.time_b")
        self.type_w = ad.parameter(xavier_uniform(rng, (d, n_types + 1)), "dec.type_w")
        self.type_b = ad.parameter(np.zeros(n_types + 1), "dec.type_b")

    @property
    def bos_index(self) -> int:
        return self.n_types + self.BOS_OFFSET

    def params(self) -> dict:
        out = {t.name: t for t in (self.embed, self.z_w, self.z_b, self.time_w,
                                   self.time_b, self.type_w, self.type_b)}
        for b in self.blocks:
            out.update(b.params())
        out.update(self.hawkes.params())
        return out

    def decode_hidden(self, types_in: np.ndarray, times_in: np.ndarray,
                      real_in: np.ndarray, z, dropout_rate: float = 0.0, rng=None):
        """Hidden states (B, L, d).  Position j sees input tokens and latent
        rows at indices <= j only; padded positions are zeroed."""
        B, L = types_in.shape
        if z.shape[0] != B or z.shape[1] != L:
            raise ContractError(f"latent grid {z.shape} does not match prefix {types_in.shape}")
        if types_in.max(initial=0) >= self.embed.shape[0]:
            raise ContractError("type index out of range for decoder embedding")
        pad_mult = real_in[:, :, None].astype(np.float64)
        z_t = z if isinstance(z, ad.Tensor) else ad.Tensor(z)
        x = ad.add(self.embed[types_in], temporal_encode(times_in, self.d))
        x = ad.add(x, ad.add(z_t @ self.z_w, self.z_b))
        x = ad.mul(x, pad_mult)
        bias = causal_attn_bias(real_in)
        for block in self.blocks:
            x = block(x, bias, pad_mult, dropout_rate, rng)
        return x

    def regression_heads(self, hidden, times_in: np.ndarray):
        """(predicted next times, type logits).  The time head adds a
        softplus increment to the current time, so predictions are always
        strictly later than the position they extend."""
        B, L = times_in.shape
        raw = ad.reshape(ad.add(hidden @ self.time_w, self.time_b), (B, L))
        pred_times = ad.add(ad.softplus(raw, ad.Tensor(1.0)), times_in)
        logits = ad.add(hidden @ self.type_w, self.type_b)
        return pred_times, logits
