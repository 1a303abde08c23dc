"""The two-headed basket model.

A shared two-layer ISAB encoder feeds two attention poolers.  The query
pooler's seed is the learnable query; its pooled context is dotted with every
(projected) ingredient embedding to score candidates.  The completeness
pooler feeds an affine layer and a sigmoid giving the probability that the
current basket is already a complete recipe.
"""
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from .numeric import (
    Tensor,
    binary_cross_entropy,
    cross_entropy_from_logits,
    masked_fill,
    matmul,
    sigmoid,
    softmax,
    take,
)
from .set_transformer import ISAB, PMA, AttentionConfig, Linear, Module

PAD_ID = 0
EXCLUDED_LOGIT = -1e9
EMBED_INIT_STD = 1.0


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    num_heads: int = 4
    m_ind: int = 16
    num_encoder_layers: int = 2
    embedding_dim_in: Optional[int] = None
    alpha: float = 0.6
    max_set_size: int = 15

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.embedding_dim_in is None:
            self.embedding_dim_in = self.d_model
        if self.max_set_size < 1 or self.num_encoder_layers < 0:
            raise ValueError("max_set_size must be >= 1 and num_encoder_layers >= 0")
        AttentionConfig(self.d_model, self.num_heads)

    def to_dict(self):
        return asdict(self)


class ForwardOutput(NamedTuple):
    logits: Tensor  # (B, V), excluded entries at EXCLUDED_LOGIT
    probs: np.ndarray  # (B, V)
    p: Tensor  # (B,)


class Batch(NamedTuple):
    ids: np.ndarray  # (B, L) int64, PAD_ID in padded slots
    mask: np.ndarray  # (B, L) bool
    targets: np.ndarray  # (B,) int64, PAD_ID where absent
    target_mask: np.ndarray  # (B,) bool
    labels: np.ndarray  # (B,) float64 completeness labels
    missing: tuple  # per row: tuple of all missing ids for that input


def pad_baskets(baskets):
    """Stack id sequences into ``(ids, mask)`` padded with PAD_ID."""
    if not baskets:
        raise ValueError("no baskets given")
    width = max(len(b) for b in baskets)
    ids = np.full((len(baskets), max(width, 1)), PAD_ID, dtype=np.int64)
    mask = np.zeros(ids.shape, dtype=bool)
    for i, b in enumerate(baskets):
        ids[i, : len(b)] = b
        mask[i, : len(b)] = True
    return ids, mask


def candidate_mask(ids, mask, vocab_size, exclude_inputs=True, extra=None):
    """Boolean ``(B, V)``: True for scoreable candidates.

    The pad id is never a candidate; basket items are dropped when
    ``exclude_inputs``; ``extra`` is an optional per-row iterable of ids.
    """
    keep = np.ones((ids.shape[0], vocab_size), dtype=bool)
    keep[:, PAD_ID] = False
    if exclude_inputs:
        rows = np.nonzero(mask)
        keep[rows[0], ids[rows]] = False
    if extra is not None:
        for i, row in enumerate(extra):
            keep[i, list(row)] = False
    if not keep.any(axis=1).all():
        raise ValueError("exclusions cover the whole vocabulary")
    return keep


def check_ids(ids, mask, vocab_size, max_set_size):
    ids = np.asarray(ids)
    mask = np.asarray(mask, dtype=bool)
    sizes = mask.sum(axis=1)
    if (sizes == 0).any():
        raise ValueError("empty basket: at least one ingredient is required")
    if (sizes > max_set_size).any():
        raise ValueError(f"basket larger than max_set_size={max_set_size}")
    live = ids[mask]
    if live.size and (live.min() < 1 or live.max() >= vocab_size):
        raise IndexError(f"ingredient id out of vocabulary range [1, {vocab_size})")


def candidate_scores(h, table):
    """Scaled dot product between pooled contexts ``(B, d)`` and every table row."""
    return matmul(h, table.T) * (1.0 / math.sqrt(h.shape[-1]))


def joint_loss(logits, targets, target_mask, p, labels, alpha):
    """``alpha * CE + (1 - alpha) * BCE``; returns ``(joint, ce, bce)`` tensors.

    A batch with no missing-ingredient target contributes a zero CE term.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    target_mask = np.asarray(target_mask, dtype=bool)
    bce = binary_cross_entropy(p, labels)
    if target_mask.any():
        ce = cross_entropy_from_logits(logits, targets, target_mask)
        return ce * alpha + bce * (1.0 - alpha), ce, bce
    return bce * (1.0 - alpha), Tensor(0.0), bce


class S2SRec2(Module):
    """Set encoder with a learnable-query candidate head and a completeness head."""

    def __init__(self, config, seed=0, pretrained=None):
        rng = np.random.default_rng(seed)
        self.config = config
        att = AttentionConfig(config.d_model, config.num_heads)
        d_in = config.embedding_dim_in
        table = rng.standard_normal((config.vocab_size, d_in)) * EMBED_INIT_STD
        if pretrained is not None:
            pretrained = np.asarray(pretrained, dtype=np.float64)
            if pretrained.shape != table.shape:
                raise ValueError(f"pretrained table shape {pretrained.shape} != {table.shape}")
            table = np.where(np.isnan(pretrained), table, pretrained)
        self.embedding = Tensor(table, requires_grad=True)
        self.input_proj = Linear(d_in, config.d_model, rng, bias=False) if d_in != config.d_model else None
        self.encoder = [ISAB(att, rng, config.m_ind) for _ in range(config.num_encoder_layers)]
        self.query_pooler = PMA(att, rng, num_seeds=1)
        self.completeness_pooler = PMA(att, rng, num_seeds=1)
        self.completeness_head = Linear(config.d_model, 1, rng)

    # -- pieces -----------------------------------------------------------

    def projected_table(self):
        if self.input_proj is None:
            return self.embedding
        return self.input_proj(self.embedding)

    def embed_basket(self, ids, table=None):
        table = self.projected_table() if table is None else table
        return take(table, ids)

    def encode_set(self, X, mask=None):
        for block in self.encoder:
            X = block(X, mask)
        return X

    def query_context(self, encoded, mask=None):
        h = self.query_pooler(encoded, mask)
        return h.reshape(h.shape[:-2] + (h.shape[-1],))

    def score_candidates(self, encoded, mask, keep, table=None):
        """Return ``(logits, probs)`` over the vocabulary; ``keep`` marks scoreable ids."""
        table = self.projected_table() if table is None else table
        h = self.query_context(encoded, mask)
        logits = masked_fill(candidate_scores(h, table), keep, EXCLUDED_LOGIT)
        probs = softmax(logits, keep).data
        return logits, probs

    def predict_completeness(self, encoded, mask=None):
        c = self.completeness_pooler(encoded, mask)
        c = c.reshape(c.shape[:-2] + (c.shape[-1],))
        z = self.completeness_head(c)
        return sigmoid(z.reshape(z.shape[:-1]))

    # -- whole model ------------------------------------------------------

    def forward(self, ids, mask, exclude_inputs=True, exclude=None):
        ids = np.asarray(ids, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        check_ids(ids, mask, self.config.vocab_size, self.config.max_set_size)
        table = self.projected_table()
        encoded = self.encode_set(self.embed_basket(ids, table), mask)
        keep = candidate_mask(ids, mask, self.config.vocab_size, exclude_inputs, exclude)
        logits, probs = self.score_candidates(encoded, mask, keep, table)
        return ForwardOutput(logits, probs, self.predict_completeness(encoded, mask))

    __call__ = forward

    def infer(self, ids, mask, exclude_inputs=True, exclude=None):
        """Candidate probabilities and completeness probabilities as arrays."""
        out = self.forward(ids, mask, exclude_inputs, exclude)
        return out.probs, out.p.data

    def batch_loss(self, batch, alpha):
        out = self.forward(batch.ids, batch.mask)
        return joint_loss(out.logits, batch.targets, batch.target_mask, out.p, batch.labels, alpha)
