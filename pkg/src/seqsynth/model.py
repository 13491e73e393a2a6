"""Model assembly: configuration, teacher-forced forward, checkpointing.

The checkpoint is a single self-describing binary file: a JSON header
(format/tool version, model config, vocabulary, caller extras, array
directory) followed by the raw float64 bytes of every parameter in
sorted-name order.  The format is deliberately hand-rolled so that two
runs with the same inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .data import EventVocabulary, PaddedBatch
from .decoder import Decoder
from .encoder import Encoder
from .errors import CheckpointVersionError
from .layers import temporal_encode  # noqa: F401  (re-exported for callers)

CHECKPOINT_MAGIC = b"SSYNCKPT\n"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    n_types: int
    max_len: int
    d: int = 64
    d_z: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    dropout: float = 0.0
    intensity_floor: float = 1e-8

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)


def make_decoder_inputs(batch: PaddedBatch, bos_index: int):
    """Shift the padded grid right by one and prepend the BOS slot, so the
    decoder at position j consumes cell j-1 and predicts cell j."""
    B, L = batch.types.shape
    types_in = np.concatenate(
        [np.full((B, 1), bos_index, dtype=np.int64), batch.types[:, :-1]], axis=1
    )
    times_in = np.concatenate([np.zeros((B, 1)), batch.times[:, :-1]], axis=1)
    real_in = np.concatenate([np.ones((B, 1), dtype=bool), batch.mask[:, :-1]], axis=1)
    return types_in, times_in, real_in


class SequenceVAE:
    """Encoder + causal Hawkes decoder over a shared vocabulary."""

    def __init__(self, cfg: ModelConfig, vocab: EventVocabulary, seed: int = 0):
        if vocab.size != cfg.n_types:
            raise CheckpointVersionError(
                f"vocabulary has {vocab.size} types but config says {cfg.n_types}"
            )
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng([seed, 0xE])
        self.encoder = Encoder(cfg.n_types, cfg.d, cfg.d_z, cfg.n_layers, cfg.n_heads,
                               cfg.d_ff, rng)
        self.decoder = Decoder(cfg.n_types, cfg.d, cfg.d_z, cfg.n_layers, cfg.n_heads,
                               cfg.d_ff, rng)

    # -- parameters ------------------------------------------------------

    def named_params(self) -> dict:
        out = {}
        out.update(self.encoder.params())
        out.update(self.decoder.params())
        return out

    def state_arrays(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_params().items()}

    def load_state_arrays(self, arrays: dict) -> None:
        params = self.named_params()
        if set(arrays) != set(params):
            missing = set(params) - set(arrays)
            extra = set(arrays) - set(params)
            raise CheckpointVersionError(f"array mismatch: missing={missing} extra={extra}")
        for k, p in params.items():
            if arrays[k].shape != p.data.shape:
                raise CheckpointVersionError(f"shape mismatch for {k}")
            p.data = np.asarray(arrays[k], dtype=np.float64).copy()

    # -- forward passes ----------------------------------------------------

    def encode_latents(self, batch: PaddedBatch, dropout: float = 0.0, rng=None):
        hidden = self.encoder.encode(batch, dropout, rng)
        return self.encoder.latent_params(hidden)

    def decode_teacher(self, batch: PaddedBatch, z, dropout: float = 0.0, rng=None):
        types_in, times_in, real_in = make_decoder_inputs(batch, self.decoder.bos_index)
        hidden = self.decoder.decode_hidden(types_in, times_in, real_in, z, dropout, rng)
        return hidden, types_in, times_in, real_in

    # -- persistence -------------------------------------------------------

    def save(self, path, extra: dict = None) -> None:
        arrays = self.state_arrays()
        names = sorted(arrays)
        header = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "tool_version": __version__,
            "model_config": self.cfg.to_dict(),
            "vocabulary": self.vocab.to_dict(),
            "extra": extra or {},
            "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(len(blob).to_bytes(8, "big"))
            f.write(blob)
            for n in names:
                f.write(np.ascontiguousarray(arrays[n], dtype=np.float64).tobytes())

    @staticmethod
    def load(path) -> tuple:
        """Returns (model, header_extra_dict)."""
        path = Path(path)
        with open(path, "rb") as f:
            magic = f.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointVersionError(f"{path} is not a seqsynth checkpoint")
            n = int.from_bytes(f.read(8), "big")
            header = json.loads(f.read(n).decode("utf-8"))
            if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise CheckpointVersionError(
                    f"checkpoint format {header.get('format_version')} unsupported"
                )
            cfg = ModelConfig.from_dict(header["model_config"])
            vocab = EventVocabulary.from_dict(header["vocabulary"])
            model = SequenceVAE(cfg, vocab, seed=0)
            arrays = {}
            for spec in header["arrays"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = f.read(count * 8)
                arrays[spec["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape)
        model.load_state_arrays(arrays)
        return model, header.get("extra", {})


def checkpoint_sha256(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
