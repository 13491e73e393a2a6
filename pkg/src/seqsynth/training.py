"""Loss composition and the optimization loop.

The objective is the sum of five terms: negative Hawkes log-likelihood
(mean per sequence), KL to the standard-normal prior (weighted), time
mean-squared error, event-type cross-entropy, and the END-position
cross-entropy that teaches sequence length.  Teacher forcing is used
throughout; the Monte-Carlo draws inside the likelihood come from a
dedicated RNG stream and are drawn once per step, so a frozen copy of
them makes the whole objective deterministic for gradient checking.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import EventVocabulary, PaddedBatch, pad_batch
from .decoder import _ll_core
from .encoder import kl_divergence, sample_z
from .errors import (
    ContractError,
    EvaluationError,
    PoisonedGradientError,
    TrainingDivergedError,
)
from .model import ModelConfig, SequenceVAE


@dataclass
class TrainConfig:
    """Optimization settings; lr defaults follow the {1e-3, 1e-4} grid."""

    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    kl_weight: float = 1.0
    n_mc: int = 20
    seed: int = 0
    grad_clip: float = 5.0
    time_weight: float = 1.0
    type_weight: float = 1.0
    length_weight: float = 1.0
    var_multiplier: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def time_mse(true_times: np.ndarray, pred_times, mask: np.ndarray):
    """Mean squared error over masked positions (real event targets)."""
    m = mask.astype(np.float64)
    n = float(m.sum())
    if n == 0:
        raise EvaluationError("time_mse undefined on an empty mask")
    err = ad.sub(pred_times, true_times)
    return ad.mul(ad.sum_(ad.mul(ad.mul(err, err), m)), 1.0 / n)


def type_ce(true_classes: np.ndarray, logits, mask: np.ndarray):
    """Mean negative log-probability of the true class over masked positions."""
    m = mask.astype(np.float64)
    n = float(m.sum())
    if n == 0:
        raise EvaluationError("type_ce undefined on an empty mask")
    logp = ad.log_softmax(logits, axis=-1)
    B, L = true_classes.shape
    bi, li = np.meshgrid(np.arange(B), np.arange(L), indexing="ij")
    picked = logp[(bi, li, true_classes)]
    return ad.mul(ad.sum_(ad.mul(picked, -m)), 1.0 / n)


def length_loss(logits, end_mask: np.ndarray, end_class: int):
    """Cross-entropy restricted to END positions, averaged over the batch.

    Every training row must terminate with exactly one END cell."""
    if not np.all(end_mask.sum(axis=1) == 1):
        raise ContractError("every row must contain exactly one END cell")
    m = end_mask.astype(np.float64)
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[:, :, end_class]
    return ad.mul(ad.sum_(ad.mul(picked, -m)), 1.0 / end_mask.shape[0])


def _target_classes(batch: PaddedBatch, vocab: EventVocabulary) -> np.ndarray:
    """Map vocabulary indices to classifier classes: real types keep their
    index, END becomes class K; padded cells are masked out by callers."""
    classes = batch.types.copy()
    classes[classes == vocab.end_index] = vocab.size
    classes[classes == vocab.pad_index] = 0  # masked anyway; keep in range
    return classes


def total_loss(batch: PaddedBatch, model: SequenceVAE, config: TrainConfig,
               rng: np.random.Generator = None, eps: np.ndarray = None,
               u_frac: np.ndarray = None, var_multiplier: float = None):
    """Composite objective; returns (scalar Tensor, per-term float breakdown).

    Pass `eps` and `u_frac` to freeze the stochastic draws (the fit loop
    draws them once per step; finite-difference checks reuse one draw)."""
    vocab = model.vocab
    K = vocab.size
    mult = config.var_multiplier if var_multiplier is None else var_multiplier

    mu, logvar = model.encode_latents(batch)
    if eps is None and mult > 0:
        if rng is None:
            raise ContractError("total_loss needs rng when draws are not frozen")
        eps = rng.standard_normal(size=mu.shape)
    z = sample_z(mu, logvar, mult, batch.mask, eps=eps)
    hidden, types_in, times_in, real_in = model.decode_teacher(batch, z)

    # Hawkes likelihood over raw-event cells (END never enters intensities)
    C = batch.max_len - 1
    ev_mask = (batch.mask & (batch.types < K))[:, :C]
    times_cells = batch.times[:, :C]
    hid_cells = hidden[:, 1:, :]
    if u_frac is None:
        if rng is None:
            raise ContractError("total_loss needs rng when draws are not frozen")
        u_frac = rng.uniform(size=(batch.batch_size, C - 1, config.n_mc))
    ll = _ll_core(times_cells, ev_mask, hid_cells, model.decoder.hawkes, u_frac,
                  model.cfg.intensity_floor)
    hawkes_term = ad.mul(ad.sum_(ll), -1.0 / batch.batch_size)

    kl_term = kl_divergence(mu, logvar, batch.mask)

    pred_times, logits = model.decoder.regression_heads(hidden, times_in)
    event_target_mask = batch.mask & (batch.types < K)
    mse_term = time_mse(batch.times, pred_times, event_target_mask)

    classes = _target_classes(batch, vocab)
    ce_term = type_ce(classes, logits, batch.mask)

    end_mask = batch.types == vocab.end_index
    len_term = length_loss(logits, end_mask, vocab.size)

    total = ad.add(hawkes_term, ad.mul(kl_term, config.kl_weight))
    total = ad.add(total, ad.mul(mse_term, config.time_weight))
    total = ad.add(total, ad.mul(ce_term, config.type_weight))
    total = ad.add(total, ad.mul(len_term, config.length_weight))

    breakdown = {
        "hawkes": float(hawkes_term.data),
        "kl": float(kl_term.data),
        "time_mse": float(mse_term.data),
        "type_ce": float(ce_term.data),
        "length": float(len_term.data),
        "total": float(total.data),
    }
    for name, value in breakdown.items():
        if not np.isfinite(value):
            raise TrainingDivergedError(f"loss term {name!r} is non-finite")
    return total, breakdown


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def clip_gradients(grads: dict, max_norm: float):
    """Global-norm clipping: rescales all gradients by a common factor, so
    the direction never changes."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, total


@dataclass
class FitResult:
    model: SequenceVAE
    history: list                 # rows of (epoch, term, value)
    best_epoch: int
    best_val: float
    diverged: bool = False


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def fit(train_seqs, val_seqs, vocab: EventVocabulary, model_cfg: ModelConfig,
        config: TrainConfig) -> FitResult:
    """Mini-batch training with best-validation checkpoint retention.

    Validation uses deterministic draws (multiplier 0, one frozen set of
    Monte-Carlo uniforms), so epochs are comparable.  On divergence a
    TrainingDivergedError carrying the last finite parameter snapshot is
    raised."""
    if not train_seqs:
        raise ContractError("fit needs a nonempty training set")
    model = SequenceVAE(model_cfg, vocab, seed=config.seed)
    params = model.named_params()
    opt = Adam(params, lr=config.lr)

    rng_shuffle = np.random.default_rng([config.seed, 1])
    rng_eps = np.random.default_rng([config.seed, 2])
    rng_mc = np.random.default_rng([config.seed, 3])
    rng_val = np.random.default_rng([config.seed, 4])

    val_batch = pad_batch(val_seqs, model_cfg.max_len, vocab) if val_seqs else None
    val_u = (rng_val.uniform(size=(val_batch.batch_size, model_cfg.max_len - 2, 100))
             if val_batch is not None else None)

    history = []
    best_val = np.inf
    best_epoch = -1
    best_state = model.state_arrays()
    last_good = model.state_arrays()

    for epoch in range(config.epochs):
        sums = {}
        count = 0
        for idx in _batches(len(train_seqs), config.batch_size, rng_shuffle):
            batch = pad_batch([train_seqs[i] for i in idx], model_cfg.max_len, vocab)
            ad.zero_grads(params)
            try:
                loss, breakdown = total_loss(batch, model, config, rng=None,
                                             eps=rng_eps.standard_normal(
                                                 (batch.batch_size, model_cfg.max_len, model_cfg.d_z))
                                             if config.var_multiplier > 0 else None,
                                             u_frac=rng_mc.uniform(
                                                 size=(batch.batch_size, model_cfg.max_len - 2, config.n_mc)))
                ad.backward(loss)
            except (TrainingDivergedError, PoisonedGradientError) as e:
                raise TrainingDivergedError(
                    f"diverged at epoch {epoch}: {e}", last_good_state=last_good
                ) from e
            grads = {k: ad.grad_of(p) for k, p in params.items()}
            grads, _ = clip_gradients(grads, config.grad_clip)
            opt.step(grads)
            for k, v in breakdown.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
            count += len(idx)
        for k in sorted(sums):
            history.append((epoch, f"train_{k}", sums[k] / count))

        if val_batch is not None:
            try:
                with ad.no_grad():
                    _, vb = total_loss(val_batch, model, config, u_frac=val_u, var_multiplier=0.0)
            except (TrainingDivergedError, PoisonedGradientError) as e:
                raise TrainingDivergedError(
                    f"diverged at epoch {epoch} (validation): {e}", last_good_state=last_good
                ) from e
            for k in sorted(vb):
                history.append((epoch, f"val_{k}", vb[k]))
            if vb["total"] < best_val:
                best_val = vb["total"]
                best_epoch = epoch
                best_state = model.state_arrays()
        state = model.state_arrays()
        if all(np.all(np.isfinite(v)) for v in state.values()):
            last_good = state

    if val_batch is not None:
        model.load_state_arrays(best_state)
    else:
        best_epoch = config.epochs - 1
        best_val = float("nan")
    return FitResult(model=model, history=history, best_epoch=best_epoch, best_val=best_val)


def write_loss_curves(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "term", "value"])
        for epoch, term, value in history:
            w.writerow([epoch, term, repr(float(value))])


def evaluate_log_likelihood(model: SequenceVAE, seqs, n_mc: int = 100, seed: int = 0) -> dict:
    """Held-out Hawkes log-likelihood (teacher-forced, z = mu) per event.

    Uses the deterministic latent (multiplier 0) and a fixed draw of the
    Monte-Carlo uniforms; returns totals and the per-event average."""
    vocab = model.vocab
    batch = pad_batch(seqs, model.cfg.max_len, vocab)
    rng = np.random.default_rng([seed, 5])
    with ad.no_grad():
        mu, logvar = model.encode_latents(batch)
        z = sample_z(mu, logvar, 0.0, batch.mask)
        hidden, _, _, _ = model.decode_teacher(batch, z)
        C = batch.max_len - 1
        ev_mask = (batch.mask & (batch.types < vocab.size))[:, :C]
        u = rng.uniform(size=(batch.batch_size, C - 1, n_mc))
        ll = _ll_core(batch.times[:, :C], ev_mask, hidden[:, 1:, :],
                      model.decoder.hawkes, u, model.cfg.intensity_floor)
    total = float(ll.data.sum())
    n_events = int(batch.lengths.sum())
    return {"total_ll": total, "n_events": n_events, "per_event_ll": total / n_events}
