"""Baselines and ablations trained on the same example stream as S2SRec2.

Stop-gated variants (``MeanPoolSetModel``, ``VanillaNN``) expose ``infer``
and plug into the sequential completion loop.  Multi-label models
(``MultiLabelSetModel``, ``LogisticBaseline``) expose ``scores`` and are
ranked once with a size-controlling probability threshold.
"""
import math

import numpy as np

from .model import (
    EMBED_INIT_STD,
    EXCLUDED_LOGIT,
    PAD_ID,
    S2SRec2,
    candidate_scores,
    candidate_mask,
    check_ids,
    joint_loss,
)
from .numeric import Tensor, binary_cross_entropy, masked_fill, matmul, relu, sigmoid, softmax, take
from .set_transformer import Linear, Module

THRESHOLD_GRID = tuple(np.concatenate([np.geomspace(1e-4, 0.5, 40, endpoint=False), np.linspace(0.5, 0.99, 50)]))


def masked_mean(X, mask):
    """Mean over the set axis of ``X`` (B, L, d) counting only unmasked rows."""
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=1, keepdims=True)
    return (X * m[..., None]).sum(axis=1) * (1.0 / counts)


def multi_hot(missing, vocab_size):
    y = np.zeros((len(missing), vocab_size))
    for i, row in enumerate(missing):
        y[i, list(row)] = 1.0
    return y


class MeanPoolSetModel(Module):
    """Set encoder ablation: the ISAB stack and both attention poolers are
    replaced by a masked mean of the embeddings; scoring and the stop head
    are unchanged."""

    def __init__(self, config, seed=0):
        rng = np.random.default_rng(seed)
        self.config = config
        d = config.d_model
        self.embedding = Tensor(rng.standard_normal((config.vocab_size, d)) * EMBED_INIT_STD, requires_grad=True)
        self.completeness_head = Linear(d, 1, rng)

    def forward(self, ids, mask, exclude_inputs=True, exclude=None):
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        check_ids(ids, mask, self.config.vocab_size, self.config.max_set_size)
        pooled = masked_mean(take(self.embedding, ids), mask)
        keep = candidate_mask(ids, mask, self.config.vocab_size, exclude_inputs, exclude)
        logits = masked_fill(candidate_scores(pooled, self.embedding), keep, EXCLUDED_LOGIT)
        z = self.completeness_head(pooled)
        return logits, softmax(logits, keep).data, sigmoid(z.reshape(z.shape[:-1]))

    def infer(self, ids, mask, exclude_inputs=True, exclude=None):
        _, probs, p = self.forward(ids, mask, exclude_inputs, exclude)
        return probs, p.data

    def batch_loss(self, batch, alpha):
        logits, _, p = self.forward(batch.ids, batch.mask)
        return joint_loss(logits, batch.targets, batch.target_mask, p, batch.labels, alpha)


class VanillaNN(Module):
    """Two affine layers over mean-pooled fixed embeddings, plus a stop head."""

    def __init__(self, config, seed=0, features=None, hidden=None):
        rng = np.random.default_rng(seed)
        self.config = config
        d_in = config.embedding_dim_in
        hidden = hidden or 2 * config.d_model
        self.features = fixed_features(config.vocab_size, d_in, rng) if features is None else np.asarray(features)
        self.fc1 = Linear(d_in, hidden, rng)
        self.fc2 = Linear(hidden, config.vocab_size, rng)
        self.stop = Linear(hidden, 1, rng)

    def forward(self, ids, mask, exclude_inputs=True, exclude=None):
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        check_ids(ids, mask, self.config.vocab_size, self.config.max_set_size)
        pooled = masked_mean(Tensor(self.features[ids]), mask)
        hidden = relu(self.fc1(pooled))
        keep = candidate_mask(ids, mask, self.config.vocab_size, exclude_inputs, exclude)
        logits = masked_fill(self.fc2(hidden), keep, EXCLUDED_LOGIT)
        z = self.stop(hidden)
        return logits, softmax(logits, keep).data, sigmoid(z.reshape(z.shape[:-1]))

    infer = MeanPoolSetModel.infer
    batch_loss = MeanPoolSetModel.batch_loss


class _ThresholdRanker:
    """Shared ranking for multi-label models: items scoring above ``threshold``."""

    threshold = 0.5

    def rank(self, baskets, threshold=None):
        from .model import pad_baskets

        thr = self.threshold if threshold is None else threshold
        ids, mask = pad_baskets(baskets)
        s = self.scores(ids, mask)
        out = []
        for row in s:
            order = np.argsort(-row, kind="stable")
            out.append([int(c) for c in order if row[c] > thr or (thr <= 0.0 and row[c] >= 0.0)])
        return out

    def fit_threshold(self, tasks, grid=THRESHOLD_GRID):
        """Choose the threshold with the lowest mean squared set-size error."""
        from .model import pad_baskets

        ids, mask = pad_baskets([t.input_ids for t in tasks])
        s = self.scores(ids, mask)
        sizes = np.array([len(t.ground_truth) for t in tasks], dtype=np.float64)
        best = None
        for thr in grid:
            err = float(np.mean(((s > thr).sum(axis=1) - sizes) ** 2))
            if best is None or err < best[0]:
                best = (err, float(thr))
        self.threshold = best[1]
        return self.threshold


class MultiLabelSetModel(Module, _ThresholdRanker):
    """S2SRec2 encoder and query pooler with independent sigmoid item scores."""

    def __init__(self, config, seed=0, pretrained=None):
        self.config = config
        self.net = S2SRec2(config, seed=seed, pretrained=pretrained)
        self.item_bias = Tensor(np.zeros(config.vocab_size), requires_grad=True)
        self.threshold = 0.5

    def _logits(self, ids, mask):
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        check_ids(ids, mask, self.config.vocab_size, self.config.max_set_size)
        table = self.net.projected_table()
        encoded = self.net.encode_set(self.net.embed_basket(ids, table), mask)
        h = self.net.query_context(encoded, mask)
        return candidate_scores(h, table) + self.item_bias

    def scores(self, ids, mask):
        logits = self._logits(ids, mask)
        s = sigmoid(logits).data.copy()
        s[~candidate_mask(ids, mask, self.config.vocab_size)] = -1.0
        return s

    def batch_loss(self, batch, alpha=None):
        logits = self._logits(batch.ids, batch.mask)
        return _multilabel_loss(logits, batch.missing, self.config.vocab_size)


def _multilabel_loss(logits, missing, vocab_size):
    y = multi_hot(missing, vocab_size)
    live = np.ones_like(y, dtype=bool)
    live[:, PAD_ID] = False
    bce = binary_cross_entropy(sigmoid(logits), y, live)
    return bce, Tensor(0.0), bce


def fixed_features(vocab_size, dim, rng):
    """Random stand-in for pretrained ingredient vectors (pad row zero)."""
    f = rng.standard_normal((vocab_size, dim))
    f[PAD_ID] = 0.0
    return f


class LogisticBaseline(Module, _ThresholdRanker):
    """One-vs-rest logistic regression on mean-pooled fixed embeddings."""

    def __init__(self, config, seed=0, features=None):
        rng = np.random.default_rng(seed)
        self.config = config
        d_in = config.embedding_dim_in
        self.features = fixed_features(config.vocab_size, d_in, rng) if features is None else np.asarray(features)
        self.weight = Tensor(np.zeros((d_in, config.vocab_size)), requires_grad=True)
        self.bias = Tensor(np.zeros(config.vocab_size), requires_grad=True)
        self.threshold = 0.5

    def _logits(self, ids, mask):
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        check_ids(ids, mask, self.config.vocab_size, self.config.max_set_size)
        x = masked_mean(Tensor(self.features[ids]), mask)
        return matmul(x, self.weight) + self.bias

    def scores(self, ids, mask):
        s = sigmoid(self._logits(ids, mask)).data.copy()
        s[~candidate_mask(ids, mask, self.config.vocab_size)] = -1.0
        return s

    def batch_loss(self, batch, alpha=None):
        return _multilabel_loss(self._logits(batch.ids, batch.mask), batch.missing, self.config.vocab_size)

    def finalize(self, train_recipes):
        """Give classes absent from every training recipe a prior-only head:
        zero weights and a bias at the smoothed prior."""
        seen = np.zeros(self.config.vocab_size, dtype=bool)
        for r in train_recipes:
            seen[list(r)] = True
        dead = ~seen
        dead[PAD_ID] = True
        prior = 0.5 / (len(train_recipes) + 1.0)
        self.weight.data[:, dead] = 0.0
        self.bias.data[dead] = math.log(prior / (1.0 - prior))
        return int(dead.sum())
