"""Recurrent sequence classifier for the audit metrics.

A small LSTM over (type embedding + projected time features) with a
logistic head.  It backs both the downstream-utility score (train on
synthetic labels, test on held-out real subjects) and the adversarial
real-vs-synthetic discriminator.  The reference hyperparameter space is
embedding {32, 64, 128}, 1-2 layers, hidden {32, 64, 128},
lr {1e-3, 1e-4}; `grid_search` picks the entry with the best AUC on a
20% validation slice of its training data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import UndefinedMetricError
from .layers import xavier_uniform
from .training import Adam, clip_gradients


@dataclass
class ClassifierConfig:
    embedding_size: int = 32
    hidden_size: int = 32
    n_layers: int = 1
    lr: float = 1e-3
    epochs: int = 12
    batch_size: int = 64
    grad_clip: float = 5.0
    seed: int = 0


def reference_search_space() -> list:
    """The full documented grid (36 entries); expensive but exhaustive."""
    grid = []
    for e in (32, 64, 128):
        for layers in (1, 2):
            for h in (32, 64, 128):
                for lr in (1e-3, 1e-4):
                    grid.append(ClassifierConfig(embedding_size=e, hidden_size=h,
                                                 n_layers=layers, lr=lr))
    return grid


def _featurize_batch(seqs, n_types: int, feat_mean: np.ndarray, feat_std: np.ndarray,
                     pad_index: int):
    L = max(len(s) for s in seqs)
    B = len(seqs)
    types = np.full((B, L), pad_index, dtype=np.int64)
    feats = np.zeros((B, L, 2))
    mask = np.zeros((B, L), dtype=bool)
    for i, s in enumerate(seqs):
        n = len(s)
        types[i, :n] = s.types
        feats[i, :n, 0] = s.times
        feats[i, :n, 1] = np.diff(s.times, prepend=s.times[0])
        mask[i, :n] = True
    # z-score with training-pool statistics so arbitrary time scales and
    # offsets stay inside the recurrent cell's responsive range
    feats = (feats - feat_mean) / feat_std
    feats[~mask] = 0.0
    return types, feats, mask


def _time_feature_stats(seqs):
    ts = np.concatenate([s.times for s in seqs])
    dts = np.concatenate([np.diff(s.times, prepend=s.times[0]) for s in seqs])
    mean = np.array([ts.mean(), dts.mean()])
    std = np.maximum(np.array([ts.std(), dts.std()]), 1e-9)
    return mean, std


class LSTMClassifier:
    def __init__(self, n_types: int, config: ClassifierConfig):
        self.n_types = n_types
        self.config = config
        rng = np.random.default_rng([config.seed, 0xC])
        e, h = config.embedding_size, config.hidden_size
        p = ad.parameter
        self.embed = p(rng.normal(0.0, 0.02, size=(n_types + 1, e)), "clf.embed")
        self.time_proj = p(xavier_uniform(rng, (2, e)), "clf.time_proj")
        self.cells = []
        d_in = e
        for layer in range(config.n_layers):
            wx = p(xavier_uniform(rng, (d_in, 4 * h)), f"clf.l{layer}.wx")
            wh = p(xavier_uniform(rng, (h, 4 * h)), f"clf.l{layer}.wh")
            b = p(np.zeros(4 * h), f"clf.l{layer}.b")
            self.cells.append((wx, wh, b))
            d_in = h
        self.out_w = p(xavier_uniform(rng, (h, 1)), "clf.out_w")
        self.out_b = p(np.zeros(1), "clf.out_b")
        self.feat_mean = np.zeros(2)
        self.feat_std = np.ones(2)

    def params(self) -> dict:
        out = {self.embed.name: self.embed, self.time_proj.name: self.time_proj,
               self.out_w.name: self.out_w, self.out_b.name: self.out_b}
        for wx, wh, b in self.cells:
            out.update({wx.name: wx, wh.name: wh, b.name: b})
        return out

    def _logits(self, types, feats, mask):
        B, L = types.shape
        h_dim = self.config.hidden_size
        x = ad.add(self.embed[types], ad.Tensor(feats) @ self.time_proj)
        steps = [x[:, t, :] for t in range(L)]
        for wx, wh, b in self.cells:
            h = ad.Tensor(np.zeros((B, h_dim)))
            c = ad.Tensor(np.zeros((B, h_dim)))
            outs = []
            for t, xt in enumerate(steps):
                gates = ad.add(ad.add(xt @ wx, h @ wh), b)
                i_g = ad.sigmoid(gates[:, 0 * h_dim:1 * h_dim])
                f_g = ad.sigmoid(gates[:, 1 * h_dim:2 * h_dim])
                g_g = ad.tanh(gates[:, 2 * h_dim:3 * h_dim])
                o_g = ad.sigmoid(gates[:, 3 * h_dim:4 * h_dim])
                c_new = ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
                h_new = ad.mul(o_g, ad.tanh(c_new))
                m = mask[:, t:t + 1].astype(np.float64)
                h = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
                c = ad.add(ad.mul(c_new, m), ad.mul(c, 1.0 - m))
                outs.append(h)
            steps = outs
        return ad.add(steps[-1] @ self.out_w, self.out_b)  # frozen at last real step

    def fit(self, seqs, labels) -> "LSTMClassifier":
        labels = np.asarray(labels, dtype=np.float64)
        self.feat_mean, self.feat_std = _time_feature_stats(seqs)
        params = self.params()
        opt = Adam(params, lr=self.config.lr)
        rng = np.random.default_rng([self.config.seed, 1])
        n = len(seqs)
        for _ in range(self.config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.config.batch_size):
                idx = order[start:start + self.config.batch_size]
                types, feats, mask = _featurize_batch([seqs[i] for i in idx],
                                                      self.n_types, self.feat_mean,
                                                      self.feat_std, self.n_types)
                y = labels[idx][:, None]
                ad.zero_grads(params)
                logit = self._logits(types, feats, mask)
                # binary cross-entropy with logits: softplus(l) - y*l
                loss = ad.mean(ad.sub(ad.softplus(logit, ad.Tensor(1.0)), ad.mul(logit, y)))
                ad.backward(loss)
                grads = {k: ad.grad_of(p) for k, p in params.items()}
                grads, _ = clip_gradients(grads, self.config.grad_clip)
                opt.step(grads)
        return self

    def scores(self, seqs) -> np.ndarray:
        from scipy.special import expit

        types, feats, mask = _featurize_batch(seqs, self.n_types, self.feat_mean,
                                              self.feat_std, self.n_types)
        with ad.no_grad():
            logit = self._logits(types, feats, mask)
        return expit(logit.data[:, 0])


def fit_classifier(seqs, labels, n_types: int, config: ClassifierConfig) -> LSTMClassifier:
    return LSTMClassifier(n_types, config).fit(seqs, labels)


def grid_search(seqs, labels, n_types: int, configs, seed: int = 0):
    """Train each config on 80% of the data, keep the one with the best
    validation AUC on the remaining 20%, and return it."""
    from .metrics import roc_auc

    configs = list(configs)
    if len(configs) == 1:
        return fit_classifier(seqs, labels, n_types, configs[0])
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 2])
    perm = rng.permutation(len(seqs))
    cut = max(1, int(0.8 * len(seqs)))
    tr, va = perm[:cut], perm[cut:]
    best, best_auc = None, -np.inf
    for cfg in configs:
        clf = fit_classifier([seqs[i] for i in tr], labels[tr], n_types,
                             replace(cfg, seed=seed))
        try:
            auc = roc_auc(labels[va], clf.scores([seqs[i] for i in va]))
        except UndefinedMetricError:
            continue
        if auc > best_auc:
            best, best_auc = clf, auc
    if best is None:
        raise UndefinedMetricError("no grid entry produced a defined validation AUC")
    return best
