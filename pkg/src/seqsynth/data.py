"""Event-sequence ingestion, validation, discretization, padding, splitting.

Canonical on-disk formats (UTF-8, header row required):

* events CSV:  ``subject_id,time,event_name,value`` -- one row per event;
  ``value`` is empty for categorical events and numeric for measurements.
* labels CSV:  ``subject_id,label`` -- binary outcome per subject.
* JSONL:       one subject per line,
  ``{"subject_id": ..., "label": 0/1, "events": [[time, name], ...]}``.

On ingestion every subject is canonicalized: events are stably sorted by
time, tied timestamps are separated by adding ``rank * 1e-6`` days within
each tie group, and times are shifted so the first event sits at exactly
t = 1.0 (several downstream formulas divide by the interval start time).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    SchemaError,
    SplitError,
    TruncationError,
    ValidationError,
    VocabularyMismatchError,
)

logger = logging.getLogger(__name__)

TIE_EPSILON = 1e-6
FIRST_EVENT_TIME = 1.0


@dataclass
class ColumnSchema:
    subject_id: str = "subject_id"
    time: str = "time"
    event_name: str = "event_name"
    value: str = "value"


@dataclass
class EventVocabulary:
    """Bidirectional name<->index map plus END/PAD and numeric cut points.

    Real event types occupy indices 0..K-1 in lexicographic name order;
    END and PAD sit above them and never enter intensity computations.
    """

    names: list
    bins: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("vocabulary names must be unique")
        if list(self.names) != sorted(self.names):
            raise ValidationError("vocabulary names must be in lexicographic order")
        self._index = {n: i for i, n in enumerate(self.names)}
        for name, cuts in self.bins.items():
            cuts = np.asarray(cuts, dtype=np.float64)
            if cuts.size == 0 or np.any(np.diff(cuts) <= 0):
                raise ValidationError(f"bins for {name!r} must be strictly increasing")
            self.bins[name] = cuts

    @property
    def size(self) -> int:
        """Number of real event types K."""
        return len(self.names)

    @property
    def end_index(self) -> int:
        return len(self.names)

    @property
    def pad_index(self) -> int:
        return len(self.names) + 1

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise VocabularyMismatchError(f"unknown event name {name!r}") from None

    def name_of(self, index: int) -> str:
        return self.names[index]

    def discretize_numeric(self, name: str, value: float) -> int:
        """Map a numeric measurement to the vocabulary index of its nearest
        training-time cut point; equidistant values resolve to the lower one."""
        cuts = self.bins.get(name)
        if cuts is None or cuts.size == 0:
            raise ConfigError(f"no discretization bins for numeric event {name!r}")
        pos = int(np.searchsorted(cuts, value))
        if pos == 0:
            chosen = cuts[0]
        elif pos == len(cuts):
            chosen = cuts[-1]
        else:
            lo, hi = cuts[pos - 1], cuts[pos]
            chosen = lo if (value - lo) <= (hi - value) else hi
        return self.index_of(numeric_name(name, chosen))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "bins": {k: v.tolist() for k, v in self.bins.items()}}

    @staticmethod
    def from_dict(d: dict) -> "EventVocabulary":
        return EventVocabulary(names=list(d["names"]), bins={k: np.asarray(v) for k, v in d.get("bins", {}).items()})


def numeric_name(base: str, value: float) -> str:
    return f"{base}={float(value)!r}"


@dataclass
class EventSequence:
    """One subject's ordered marked events plus a binary outcome label."""

    subject_id: str
    times: np.ndarray
    types: np.ndarray
    label: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.types = np.asarray(self.types, dtype=np.int64)
        self.label = int(self.label)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0

    def validate(self, vocab: EventVocabulary) -> None:
        if len(self.times) != len(self.types):
            raise ValidationError(f"{self.subject_id}: times/types length mismatch")
        if len(self.times) < 1:
            raise ValidationError(f"{self.subject_id}: empty sequence")
        if np.any(~np.isfinite(self.times)) or np.any(self.times < 0):
            raise ValidationError(f"{self.subject_id}: times must be finite and non-negative")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError(f"{self.subject_id}: times must be strictly increasing")
        if self.label not in (0, 1):
            raise ValidationError(f"{self.subject_id}: label must be 0 or 1")
        bad = (self.types < 0) | (self.types >= vocab.pad_index)
        if np.any(bad):
            raise ValidationError(f"{self.subject_id}: type index out of range")
        ends = np.nonzero(self.types == vocab.end_index)[0]
        if len(ends) > 1 or (len(ends) == 1 and ends[0] != len(self.types) - 1):
            raise ValidationError(f"{self.subject_id}: END must appear at most once, terminally")


def canonicalize(times, types) -> tuple:
    """Stable-sort by time, separate ties, shift first event to t = 1.0."""
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.int64)
    order = np.argsort(times, kind="stable")
    times, types = times[order].copy(), types[order].copy()
    # separate tied timestamps: within a tie group event i gets +i*eps
    i = 0
    while i < len(times):
        j = i
        while j + 1 < len(times) and times[j + 1] == times[i]:
            j += 1
        for k in range(i, j + 1):
            times[k] += (k - i) * TIE_EPSILON
        i = j + 1
    if len(times):
        times += FIRST_EVENT_TIME - times[0]
    return times, types


def canonicalize_sequences(seqs) -> list:
    out = []
    for s in seqs:
        t, k = canonicalize(s.times, s.types)
        out.append(EventSequence(s.subject_id, t, k, s.label))
    return out


@dataclass
class PaddedBatch:
    """Dense B x Lmax view of a batch. ``mask`` is true on real cells
    (events plus the terminal END); ``lengths`` counts raw events, so each
    row has ``lengths[i] + 1`` true mask cells."""

    times: np.ndarray
    types: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.times.shape[0]

    @property
    def max_len(self) -> int:
        return self.times.shape[1]


def pad_batch(seqs, max_len: int, vocab: EventVocabulary) -> PaddedBatch:
    """Lay out sequences as [e_1..e_L, END, PAD...]; END inherits the last
    event's timestamp, padded cells hold (pad_index, 0.0)."""
    B = len(seqs)
    times = np.zeros((B, max_len), dtype=np.float64)
    types = np.full((B, max_len), vocab.pad_index, dtype=np.int64)
    mask = np.zeros((B, max_len), dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    for i, s in enumerate(seqs):
        L = len(s)
        if L + 1 > max_len:
            raise TruncationError(
                f"{s.subject_id}: length {L} does not fit max_len {max_len} (END needs one slot)"
            )
        times[i, :L] = s.times
        types[i, :L] = s.types
        times[i, L] = s.times[-1]
        types[i, L] = vocab.end_index
        mask[i, : L + 1] = True
        lengths[i] = L
    return PaddedBatch(times=times, types=types, mask=mask, lengths=lengths)


def unpad_batch(batch: PaddedBatch, vocab: EventVocabulary) -> list:
    """Recover (times, types) of the raw events from a padded batch."""
    out = []
    for i in range(batch.batch_size):
        L = int(batch.lengths[i])
        out.append((batch.times[i, :L].copy(), batch.types[i, :L].copy()))
    return out


def split(seqs, train_frac: float, seed: int) -> tuple:
    """Deterministic shuffle split; train side gets floor(n * train_frac)."""
    if not 0.0 < train_frac < 1.0:
        raise ConfigError("train_frac must lie strictly between 0 and 1")
    n = len(seqs)
    if n < 2:
        raise SplitError("need at least 2 subjects to split")
    n_train = math.floor(n * train_frac)
    if n_train < 1 or n_train >= n:
        raise SplitError(f"split {n_train}/{n - n_train} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    train = [seqs[i] for i in perm[:n_train]]
    test = [seqs[i] for i in perm[n_train:]]
    logger.info(
        "split %d/%d subjects; label share train=%.3f test=%.3f",
        len(train), len(test), label_proportion(train), label_proportion(test),
    )
    return train, test


def label_proportion(seqs) -> float:
    return float(np.mean([s.label for s in seqs])) if seqs else float("nan")


@dataclass
class ParseResult:
    sequences: list
    vocabulary: EventVocabulary
    warnings: dict = field(default_factory=dict)


def _read_labels(path, schema: ColumnSchema) -> dict:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"label file not found: {path}")
    labels = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "label" not in reader.fieldnames or schema.subject_id not in reader.fieldnames:
            raise SchemaError(f"label file {path} must have columns {schema.subject_id},label")
        for rownum, row in enumerate(reader, start=2):
            try:
                lab = int(row["label"])
            except ValueError:
                raise ValidationError(f"{path} row {rownum}: label must be an integer") from None
            if lab not in (0, 1):
                raise ValidationError(f"{path} row {rownum}: label must be 0 or 1")
            labels[row[schema.subject_id]] = lab
    return labels


def parse_events(events_path, labels_path, schema: ColumnSchema = None, vocab: EventVocabulary = None) -> ParseResult:
    """Load events + labels CSVs into canonical sequences and a vocabulary.

    With ``vocab=None`` the vocabulary (including numeric discretization
    bins) is rebuilt from this file in lexicographic order; pass the
    training vocabulary when loading held-out or synthetic data so numeric
    values map onto training-time bins and unseen names are rejected.
    """
    schema = schema or ColumnSchema()
    events_path = Path(events_path)
    if not events_path.exists():
        raise SchemaError(f"events file not found: {events_path}")
    labels = _read_labels(labels_path, schema)

    raw_rows = {}
    numeric_values = {}
    with open(events_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = [schema.subject_id, schema.time, schema.event_name]
        if reader.fieldnames is None:
            return ParseResult([], vocab or EventVocabulary(names=[]), {"label_orphans": len(labels)})
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{events_path}: missing columns {missing}")
        has_value = schema.value in reader.fieldnames
        for rownum, row in enumerate(reader, start=2):
            sid = row[schema.subject_id]
            try:
                t = float(row[schema.time])
            except ValueError:
                raise ValidationError(f"{events_path} row {rownum}: time is not a number") from None
            if math.isnan(t):
                raise ValidationError(f"{events_path} row {rownum}: NaN time rejected")
            if t < 0:
                raise ValidationError(f"{events_path} row {rownum}: negative time rejected")
            base = row[schema.event_name]
            raw_value = row.get(schema.value, "") if has_value else ""
            if raw_value is not None and str(raw_value).strip() != "":
                try:
                    v = float(raw_value)
                except ValueError:
                    raise ValidationError(f"{events_path} row {rownum}: value is not a number") from None
                if math.isnan(v):
                    raise ValidationError(f"{events_path} row {rownum}: NaN value rejected")
                numeric_values.setdefault(base, set()).add(v)
                raw_rows.setdefault(sid, []).append((t, base, v))
            else:
                raw_rows.setdefault(sid, []).append((t, base, None))

    if not raw_rows:
        return ParseResult([], vocab or EventVocabulary(names=[]), {"label_orphans": len(labels)})

    if vocab is None:
        names = set()
        bins = {}
        for base, vals in numeric_values.items():
            cuts = np.array(sorted(vals))
            bins[base] = cuts
            names.update(numeric_name(base, c) for c in cuts)
        for rows in raw_rows.values():
            names.update(base for _, base, v in rows if v is None)
        vocab = EventVocabulary(names=sorted(names), bins=bins)

    sequences = []
    missing_labels = []
    for sid in sorted(raw_rows):
        if sid not in labels:
            missing_labels.append(sid)
            continue
        rows = raw_rows[sid]
        times = []
        types = []
        for t, base, v in rows:
            if v is None:
                idx = vocab.index_of(base)
            else:
                idx = vocab.discretize_numeric(base, v)
            times.append(t)
            types.append(idx)
        ct, ck = canonicalize(times, types)
        seq = EventSequence(sid, ct, ck, labels[sid])
        seq.validate(vocab)
        sequences.append(seq)

    if missing_labels:
        raise ValidationError(
            f"{len(missing_labels)} subjects have events but no label (first: {missing_labels[0]!r})"
        )
    orphans = len(set(labels) - set(raw_rows))
    if orphans:
        logger.warning("%d labels have no event rows; ignored", orphans)
    return ParseResult(sequences, vocab, {"label_orphans": orphans})


def write_events_csv(seqs, vocab: EventVocabulary, path, schema: ColumnSchema = None) -> None:
    schema = schema or ColumnSchema()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([schema.subject_id, schema.time, schema.event_name, schema.value])
        for s in seqs:
            for t, k in zip(s.times, s.types):
                writer.writerow([s.subject_id, repr(float(t)), vocab.name_of(int(k)), ""])


def write_labels_csv(seqs, path, schema: ColumnSchema = None) -> None:
    schema = schema or ColumnSchema()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([schema.subject_id, "label"])
        for s in seqs:
            writer.writerow([s.subject_id, s.label])


def write_jsonl(seqs, vocab: EventVocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in seqs:
            rec = {
                "subject_id": s.subject_id,
                "label": s.label,
                "events": [[float(t), vocab.name_of(int(k))] for t, k in zip(s.times, s.types)],
            }
            f.write(json.dumps(rec) + "\n")


def read_jsonl(path, vocab: EventVocabulary = None) -> ParseResult:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"jsonl file not found: {path}")
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise SchemaError(f"{path} line {lineno}: invalid JSON") from None
            for t, _ in rec["events"]:
                if not isinstance(t, (int, float)) or math.isnan(t):
                    raise ValidationError(f"{path} line {lineno}: NaN time rejected")
                if t < 0:
                    raise ValidationError(f"{path} line {lineno}: negative time rejected")
            records.append(rec)
    if vocab is None:
        names = sorted({name for rec in records for _, name in rec["events"]})
        vocab = EventVocabulary(names=names)
    sequences = []
    for rec in records:
        times = [t for t, _ in rec["events"]]
        types = [vocab.index_of(n) for _, n in rec["events"]]
        ct, ck = canonicalize(times, types)
        seq = EventSequence(rec["subject_id"], ct, ck, rec["label"])
        seq.validate(vocab)
        sequences.append(seq)
    sequences.sort(key=lambda s: s.subject_id)
    return ParseResult(sequences, vocab, {})
