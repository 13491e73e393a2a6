"""Autoregressive synthesis from latent codes.

A source subject is encoded once; a latent grid is sampled around the
posterior mean with the configured variance multiplier; the decoder then
rolls the sequence out from that latent alone, appending each prediction
to its own input, so nothing about the source events can leak past the
encoding step.  In events-known mode the type head is restricted to the
source subject's observed types (END always stays reachable).

The first prediction may not be END: every real subject has at least one
event, so an empty synthetic subject would be degenerate.  Subjects are
independent and each one draws from its own RNG stream derived from
(seed, subject index), which makes dataset synthesis order- and
batch-size-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import EventSequence, pad_batch
from .encoder import LatentCode
from .errors import ConfigError, DomainError
from .model import SequenceVAE

MASKED_LOGIT = -1e30


@dataclass
class GenerationConfig:
    mode: str = "events_unknown"          # or "events_known"
    var_multiplier: float = 1.0
    max_len: int = None                   # cap on generated raw events
    type_sampling: str = "categorical"    # or "argmax"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("events_unknown", "events_known"):
            raise ConfigError(f"unknown generation mode {self.mode!r}")
        if self.type_sampling not in ("categorical", "argmax"):
            raise ConfigError(f"unknown type sampling {self.type_sampling!r}")
        if self.var_multiplier < 0:
            raise DomainError("var_multiplier must be >= 0")


def mask_logits(logits: np.ndarray, allowed, n_types: int) -> np.ndarray:
    """Restrict type logits to an allowed set of real types; END (class
    n_types) is always permitted."""
    allowed = set(int(a) for a in allowed)
    if not allowed:
        raise DomainError("events-known mask needs a nonempty allowed set")
    if any(a < 0 or a >= n_types for a in allowed):
        raise DomainError("allowed set contains indices outside the real-type range")
    out = np.array(logits, dtype=np.float64, copy=True)
    for k in range(n_types):
        if k not in allowed:
            out[k] = MASKED_LOGIT
    return out


def encode_latent(model: SequenceVAE, source: EventSequence, var_multiplier: float,
                  rng: np.random.Generator) -> LatentCode:
    """Encode one subject and sample its latent grid."""
    codes = encode_latents(model, [source], var_multiplier, [rng])
    return codes[0]


def encode_latents(model: SequenceVAE, sources, var_multiplier: float, rngs) -> list:
    """Batch-encode subjects; epsilon draws come from each subject's own rng."""
    if var_multiplier < 0:
        raise DomainError("var_multiplier must be >= 0")
    batch = pad_batch(sources, model.cfg.max_len, model.vocab)
    with ad.no_grad():
        mu_t, logvar_t = model.encode_latents(batch)
    mu, logvar = mu_t.data, logvar_t.data
    codes = []
    for i, s in enumerate(sources):
        if var_multiplier == 0.0:
            z = mu[i] * batch.mask[i][:, None]
        else:
            eps = rngs[i].standard_normal(size=mu[i].shape)
            z = (mu[i] + var_multiplier * np.exp(logvar[i] / 2.0) * eps) * batch.mask[i][:, None]
        codes.append(LatentCode(mu=mu[i].copy(), logvar=logvar[i].copy(), z=z,
                                var_multiplier=var_multiplier, mask=batch.mask[i].copy()))
    return codes


@dataclass
class SubjectMeta:
    source_id: str
    var_multiplier: float
    mode: str
    n_events: int
    truncated: bool

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "var_multiplier": self.var_multiplier,
            "mode": self.mode,
            "n_events": self.n_events,
            "truncated": self.truncated,
        }


def _decode_rollout(model: SequenceVAE, zs, n_reals, allowed_sets, config, rngs):
    """Shared rollout over a batch of latent grids.

    zs: list of (Lz, d_z) latent grids; n_reals: real-row counts in each
    grid (rows past the end reuse the last real row); allowed_sets: None
    or a per-subject set of permitted type indices.
    Returns lists of (times, types, truncated)."""
    B = len(zs)
    K = model.vocab.size
    dec = model.decoder
    max_events = config.max_len if config.max_len is not None else model.cfg.max_len - 1
    if max_events < 1:
        raise ConfigError("max_len must allow at least one event")

    # latent rows used at decoder positions, with the last real row reused
    # once the rollout outgrows the encoded grid
    z_used = np.zeros((B, max_events + 1, model.cfg.d_z))
    for b in range(B):
        idx = np.minimum(np.arange(max_events + 1), n_reals[b] - 1)
        z_used[b] = zs[b][idx]

    add_mask = np.zeros((B, K + 1))
    if allowed_sets is not None:
        for b, allowed in enumerate(allowed_sets):
            allowed = set(int(a) for a in allowed)
            if not allowed:
                raise DomainError("events-known mask needs a nonempty allowed set")
            for k in range(K):
                if k not in allowed:
                    add_mask[b, k] = MASKED_LOGIT

    types_in = np.full((B, 1), dec.bos_index, dtype=np.int64)
    times_in = np.zeros((B, 1))
    active = np.ones(B, dtype=bool)
    out_times = [[] for _ in range(B)]
    out_types = [[] for _ in range(B)]

    with ad.no_grad():
        for step in range(max_events + 1):
            if not active.any():
                break
            P = types_in.shape[1]
            hidden = dec.decode_hidden(types_in, times_in, np.ones((B, P), dtype=bool),
                                       z_used[:, :P])
            last = hidden[:, P - 1:P, :]
            pred_t, logits = dec.regression_heads(last, times_in[:, P - 1:P])
            pred_t = pred_t.data[:, 0]
            logits = logits.data[:, 0, :] + add_mask
            if step == 0:
                logits[:, K] = MASKED_LOGIT  # first prediction may not be END
            last_step = step == max_events
            next_types = np.empty(B, dtype=np.int64)
            for b in range(B):
                if not active[b]:
                    next_types[b] = types_in[b, -1]
                    continue
                row = logits[b]
                if config.type_sampling == "argmax":
                    k = int(np.argmax(row))
                else:
                    shifted = row - row.max()
                    probs = np.exp(shifted)
                    probs /= probs.sum()
                    k = int(np.searchsorted(np.cumsum(probs), rngs[b].uniform(), side="right"))
                    k = min(k, K)
                next_types[b] = k
                if k == K:  # END emitted: clean stop
                    active[b] = False
                elif not last_step:
                    out_times[b].append(float(pred_t[b]))
                    out_types[b].append(k)
                # at the cap a real-type draw appends nothing; the row stays
                # active and is reported as truncated
            if last_step:
                break
            # finished rows keep their last token; their outputs are ignored
            append_types = np.where(active, next_types, types_in[:, -1])
            append_times = np.where(active, pred_t, times_in[:, -1])
            types_in = np.concatenate([types_in, append_types[:, None]], axis=1)
            times_in = np.concatenate([times_in, append_times[:, None]], axis=1)

    results = []
    for b in range(B):
        truncated = bool(active[b])
        results.append((np.asarray(out_times[b]), np.asarray(out_types[b], dtype=np.int64),
                        truncated))
    return results


def synthesize_from_latent(model: SequenceVAE, latent: LatentCode, config: GenerationConfig,
                           rng: np.random.Generator, label: int, subject_id: str,
                           allowed_types=None):
    """Roll out one subject from an already-sampled latent grid."""
    n_real = int(latent.mask.sum())
    allowed = [allowed_types] if allowed_types is not None else None
    (times, types, truncated), = _decode_rollout(
        model, [latent.z], [n_real], allowed, config, [rng]
    )
    seq = EventSequence(subject_id, times, types, label)
    meta = SubjectMeta(source_id=subject_id, var_multiplier=config.var_multiplier,
                       mode=config.mode, n_events=len(times), truncated=truncated)
    return seq, meta


def synthesize_one(source: EventSequence, model: SequenceVAE, config: GenerationConfig,
                   rng: np.random.Generator):
    """Encode, sample around the posterior, and decode one subject.

    The label is copied from the source; with var_multiplier 0 the whole
    path is deterministic given the parameters."""
    latent = encode_latent(model, source, config.var_multiplier, rng)
    allowed = set(int(k) for k in source.types) if config.mode == "events_known" else None
    return synthesize_from_latent(model, latent, config, rng, source.label,
                                  source.subject_id, allowed)


def synthesize_dataset(real_seqs, model: SequenceVAE, config: GenerationConfig):
    """One synthetic subject per real subject, labels carried over.

    Per-subject RNG streams derive from (seed, subject index); failures
    are counted in the run metadata rather than aborting the run."""
    if not real_seqs:
        raise DomainError("need at least one source subject")
    rngs = [np.random.default_rng([config.seed, i]) for i in range(len(real_seqs))]
    codes = encode_latents(model, real_seqs, config.var_multiplier, rngs)
    allowed = ([set(int(k) for k in s.types) for s in real_seqs]
               if config.mode == "events_known" else None)
    rollouts = _decode_rollout(model, [c.z for c in codes],
                               [int(c.mask.sum()) for c in codes], allowed, config, rngs)
    synthetic = []
    metas = []
    failures = 0
    for s, (times, types, truncated) in zip(real_seqs, rollouts):
        try:
            seq = EventSequence(s.subject_id, times, types, s.label)
            if len(seq) == 0:
                raise ValueError("empty rollout")
            synthetic.append(seq)
            metas.append(SubjectMeta(source_id=s.subject_id,
                                     var_multiplier=config.var_multiplier,
                                     mode=config.mode, n_events=len(times),
                                     truncated=truncated))
        except Exception:
            failures += 1
    run_meta = {
        "mode": config.mode,
        "var_multiplier": config.var_multiplier,
        "seed": config.seed,
        "type_sampling": config.type_sampling,
        "n_requested": len(real_seqs),
        "n_generated": len(synthetic),
        "failures": failures,
        "subjects": [m.to_dict() for m in metas],
    }
    return synthetic, run_meta
