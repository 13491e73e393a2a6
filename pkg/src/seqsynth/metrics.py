"""Audit metrics: downstream utility, adversarial discriminability,
distance to closest record, and the nearest-neighbor dataset attack.

Feature space: per event type the (count, mean time, population std of
times) triple, flattened to 3K.  Distances are computed after z-scoring
with the real set's statistics; features with zero variance across the
real set are dropped rather than divided by an epsilon, which keeps an
exact copy at distance exactly zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .classifier import ClassifierConfig, fit_classifier, grid_search
from .data import EventSequence
from .errors import DomainError, UndefinedMetricError


def featurize(seq: EventSequence, n_types: int) -> np.ndarray:
    """(count, mean time, population std) per type, flattened to 3K."""
    out = np.zeros(3 * n_types)
    for k in range(n_types):
        ts = seq.times[seq.types == k]
        if len(ts):
            out[3 * k] = len(ts)
            out[3 * k + 1] = ts.mean()
            out[3 * k + 2] = ts.std()  # population std; a single event gives 0
    return out


def featurize_set(seqs, n_types: int) -> np.ndarray:
    return np.stack([featurize(s, n_types) for s in seqs])


def _normalize_by_real(real_feats: np.ndarray, other_feats: np.ndarray):
    """Z-score both sets with the real set's statistics; drop features whose
    real-set variance is zero."""
    mean = real_feats.mean(axis=0)
    std = real_feats.std(axis=0)
    keep = std > 0
    if not keep.any():
        # all features constant: every record collapses to the same point
        return np.zeros((len(real_feats), 1)), np.zeros((len(other_feats), 1))
    return ((real_feats[:, keep] - mean[keep]) / std[keep],
            (other_feats[:, keep] - mean[keep]) / std[keep])


def dcr(synthetic, real, n_types: int) -> np.ndarray:
    """Per-synthetic-subject L2 distance to the nearest real subject."""
    if not synthetic or not real:
        raise DomainError("dcr needs nonempty synthetic and real sets")
    real_f = featurize_set(real, n_types)
    syn_f = featurize_set(synthetic, n_types)
    real_z, syn_z = _normalize_by_real(real_f, syn_f)
    d2 = (np.sum(syn_z**2, axis=1)[:, None] + np.sum(real_z**2, axis=1)[None, :]
          - 2.0 * syn_z @ real_z.T)
    return np.sqrt(np.maximum(d2.min(axis=1), 0.0))


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC; tied scores contribute 1/2."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes present")
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def bootstrap_std(metric_fn, n_items: int, n_boot: int = 100,
                  rng: np.random.Generator = None, max_retries: int = 10) -> float:
    """Std of `metric_fn(indices)` over bootstrap resamples of range(n_items).

    Resamples on which the metric is undefined are redrawn (up to
    `max_retries` times each) before giving up."""
    if n_boot < 2:
        raise DomainError("bootstrap needs n >= 2")
    rng = rng or np.random.default_rng(0)
    vals = []
    for _ in range(n_boot):
        for attempt in range(max_retries + 1):
            idx = rng.integers(0, n_items, size=n_items)
            try:
                vals.append(metric_fn(idx))
                break
            except UndefinedMetricError:
                if attempt == max_retries:
                    raise
    return float(np.std(vals))


def utility_score(synthetic_train, real_test, n_types: int,
                  clf_configs=None, seed: int = 0, n_boot: int = 100):
    """Train a sequence classifier on synthetic labels, score real test
    subjects; std comes from bootstrap resamples of the test set."""
    clf_configs = clf_configs or [ClassifierConfig(seed=seed)]
    labels_tr = [s.label for s in synthetic_train]
    if len(set(labels_tr)) < 2:
        raise UndefinedMetricError("synthetic training labels are single-class")
    clf = grid_search(synthetic_train, labels_tr, n_types, clf_configs, seed=seed)
    y = np.array([s.label for s in real_test])
    if len(set(y.tolist())) < 2:
        raise UndefinedMetricError("real test labels are single-class")
    scores = clf.scores(real_test)
    auc = roc_auc(y, scores)
    std = bootstrap_std(lambda idx: roc_auc(y[idx], scores[idx]), len(y), n_boot,
                        np.random.default_rng([seed, 7]))
    return auc, std


def ml_inference_score(real_set, synthetic_set, n_types: int,
                       clf_configs=None, seed: int = 0, n_boot: int = 100):
    """AUC of a real-vs-synthetic discriminator; 0.5 means indistinguishable.

    Real subjects carry label 0, synthetic 1; the pool is split 80/20
    stratified by origin, the classifier trains on the 80% and is scored
    on the held-out 20%."""
    if not real_set or not synthetic_set:
        raise DomainError("ml_inference needs nonempty real and synthetic sets")
    clf_configs = clf_configs or [ClassifierConfig(seed=seed)]
    rng = np.random.default_rng([seed, 11])
    pool = list(real_set) + list(synthetic_set)
    origin = np.array([0] * len(real_set) + [1] * len(synthetic_set))
    train_idx, test_idx = [], []
    for lab in (0, 1):
        members = np.nonzero(origin == lab)[0]
        perm = rng.permutation(len(members))
        cut = max(1, int(0.8 * len(members)))
        train_idx.extend(members[perm[:cut]])
        test_idx.extend(members[perm[cut:]])
    train_idx, test_idx = np.array(train_idx), np.array(test_idx)
    clf = grid_search([pool[i] for i in train_idx], origin[train_idx], n_types,
                      clf_configs, seed=seed)
    y = origin[test_idx]
    scores = clf.scores([pool[i] for i in test_idx])
    auc = roc_auc(y, scores)
    std = bootstrap_std(lambda idx: roc_auc(y[idx], scores[idx]), len(y), n_boot,
                        np.random.default_rng([seed, 13]))
    return auc, std


def dataset_attack(real_train, synthetic, n_types: int) -> float:
    """Fraction of real training records whose nearest neighbor (self
    excluded) is another real record rather than a synthetic one.
    Exact ties resolve to synthetic; 0.5 is the ideal value."""
    if len(real_train) < 2:
        raise DomainError("dataset attack needs at least two real records")
    if not synthetic:
        raise DomainError("dataset attack needs a nonempty synthetic set")
    real_f = featurize_set(real_train, n_types)
    syn_f = featurize_set(synthetic, n_types)
    real_z, syn_z = _normalize_by_real(real_f, syn_f)
    rr = (np.sum(real_z**2, axis=1)[:, None] + np.sum(real_z**2, axis=1)[None, :]
          - 2.0 * real_z @ real_z.T)
    np.fill_diagonal(rr, np.inf)
    rs = (np.sum(real_z**2, axis=1)[:, None] + np.sum(syn_z**2, axis=1)[None, :]
          - 2.0 * real_z @ syn_z.T)
    d_real = np.maximum(rr.min(axis=1), 0.0)
    d_syn = np.maximum(rs.min(axis=1), 0.0)
    return float(np.mean(d_real < d_syn))


@dataclass
class MetricReport:
    utility_rocauc: float
    utility_std: float
    ml_inference: float
    ml_inference_std: float
    dcr_mean: float
    dcr_median: float
    dcr_distances: list
    dataset_attack: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "utility": {"rocauc": self.utility_rocauc, "std": self.utility_std},
            "ml_inference": {"rocauc": self.ml_inference, "std": self.ml_inference_std},
            "dcr": {"mean": self.dcr_mean, "median": self.dcr_median,
                    "distances": list(map(float, self.dcr_distances))},
            "dataset_attack": self.dataset_attack,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_row(self, multiplier) -> list:
        return [multiplier, self.utility_rocauc, self.utility_std, self.ml_inference,
                self.dcr_mean, self.dataset_attack]

    CSV_HEADER = ["multiplier", "utility", "util_std", "ml_inf", "dcr_mean", "attack"]

    @staticmethod
    def from_dict(d: dict) -> "MetricReport":
        return MetricReport(
            utility_rocauc=d["utility"]["rocauc"], utility_std=d["utility"]["std"],
            ml_inference=d["ml_inference"]["rocauc"], ml_inference_std=d["ml_inference"]["std"],
            dcr_mean=d["dcr"]["mean"], dcr_median=d["dcr"]["median"],
            dcr_distances=d["dcr"]["distances"], dataset_attack=d["dataset_attack"],
            metadata=d.get("metadata", {}),
        )


def evaluate_all(real_train, real_test, synthetic, n_types: int,
                 clf_configs=None, seed: int = 0, metadata: dict = None) -> MetricReport:
    """All four audit metrics on one synthetic dataset."""
    util, util_std = utility_score(synthetic, real_test, n_types, clf_configs, seed=seed)
    mli, mli_std = ml_inference_score(real_train, synthetic, n_types, clf_configs, seed=seed)
    distances = dcr(synthetic, real_train, n_types)
    attack = dataset_attack(real_train, synthetic, n_types)
    return MetricReport(
        utility_rocauc=util, utility_std=util_std,
        ml_inference=mli, ml_inference_std=mli_std,
        dcr_mean=float(distances.mean()), dcr_median=float(np.median(distances)),
        dcr_distances=distances.tolist(), dataset_attack=attack,
        metadata=metadata or {},
    )
