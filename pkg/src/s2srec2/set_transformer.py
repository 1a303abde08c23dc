"""Set Transformer building blocks: attention, multi-head attention, MAB, SAB, ISAB, PMA.

All blocks accept either a single set ``(n, d)`` or a padded batch
``(B, n, d)`` with a boolean ``key_mask`` of shape ``(B, n)`` marking real
elements.  Padded rows never influence unmasked outputs.
"""
import math
from dataclasses import dataclass

import numpy as np

from .numeric import Tensor, layer_norm, matmul, relu, softmax


class Module:
    """Minimal parameter container; attribute order fixes parameter order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 64
    num_heads: int = 4

    def __post_init__(self):
        if self.d_model < 1 or self.num_heads < 1:
            raise ValueError("d_model and num_heads must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")

    @property
    def d_head(self):
        return self.d_model // self.num_heads


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = _uniform(rng, d_in, (d_in, d_out))
        self.bias = _uniform(rng, d_in, (d_out,)) if bias else None

    def __call__(self, x):
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta)


class RFF(Module):
    """Row-wise feed-forward: affine, ReLU, affine (hidden width 2*d)."""

    def __init__(self, d, rng, hidden=None):
        hidden = hidden or 2 * d
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x):
        return self.fc2(relu(self.fc1(x)))


def attention(Q, K, V, key_mask=None):
    """``softmax(Q K^T / sqrt(d_k)) V`` over the last two axes.

    ``key_mask`` (shape ``(..., b)``) marks usable keys; masked keys get zero
    weight.  Raises ``MaskError`` when a query sees no usable key.
    """
    scale = 1.0 / math.sqrt(K.shape[-1])
    scores = matmul(Q, K.T) * scale
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, :]
    return matmul(softmax(scores, mask), V)


class MultiHead(Module):
    """Per-head attention on linearly projected queries, keys and values,
    heads concatenated and passed through an output projection."""

    def __init__(self, config, rng):
        d = config.d_model
        self.config = config
        self.w_q = _uniform(rng, d, (d, d))
        self.w_k = _uniform(rng, d, (d, d))
        self.w_v = _uniform(rng, d, (d, d))
        self.out = Linear(d, d, rng)

    def _split(self, x):
        h, dh = self.config.num_heads, self.config.d_head
        return x.reshape(x.shape[:-1] + (h, dh)).swapaxes(-3, -2)

    def heads(self, x_q, x_kv, key_mask=None):
        """Concatenated head outputs before the output projection."""
        q = self._split(matmul(x_q, self.w_q))
        k = self._split(matmul(x_kv, self.w_k))
        v = self._split(matmul(x_kv, self.w_v))
        mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[..., None, :]
        a = attention(q, k, v, mask)
        a = a.swapaxes(-3, -2)
        return a.reshape(a.shape[:-2] + (self.config.d_model,))

    def __call__(self, x_q, x_kv, key_mask=None):
        return self.out(self.heads(x_q, x_kv, key_mask))


class MAB(Module):
    """Multi-head attention block: X attends to Y, residual + LayerNorm, then RFF + LayerNorm."""

    def __init__(self, config, rng):
        self.attn = MultiHead(config, rng)
        self.ln1 = LayerNorm(config.d_model)
        self.rff = RFF(config.d_model, rng)
        self.ln2 = LayerNorm(config.d_model)

    def __call__(self, X, Y, key_mask=None):
        H = self.ln1(X + self.attn(X, Y, key_mask))
        return self.ln2(H + self.rff(H))


class SAB(Module):
    def __init__(self, config, rng):
        self.mab = MAB(config, rng)

    def __call__(self, X, mask=None):
        return self.mab(X, X, mask)


class ISAB(Module):
    """Induced set attention: inducing points summarise X, then X attends to the summary."""

    def __init__(self, config, rng, num_inducing=16):
        if num_inducing < 1:
            raise ValueError("num_inducing must be >= 1")
        self.inducing = Tensor(rng.standard_normal((num_inducing, config.d_model)) * 0.02, requires_grad=True)
        self.mab_inner = MAB(config, rng)
        self.mab_outer = MAB(config, rng)

    def __call__(self, X, mask=None):
        summary = self.mab_inner(self.inducing, X, mask)
        return self.mab_outer(X, summary)


class PMA(Module):
    """Pooling by attention from trainable seeds onto ``RFF(Z)``; permutation invariant."""

    def __init__(self, config, rng, num_seeds=1):
        if num_seeds < 1:
            raise ValueError("num_seeds must be >= 1")
        self.seeds = Tensor(rng.standard_normal((num_seeds, config.d_model)) * 0.02, requires_grad=True)
        self.rff = RFF(config.d_model, rng)
        self.mab = MAB(config, rng)

    def __call__(self, Z, mask=None):
        if Z.shape[-2] == 0:
            raise ValueError("cannot pool an empty set")
        return self.mab(self.seeds, self.rff(Z), mask)


# functional aliases mirroring the block names
def multi_head(x_q, x_kv, params, key_mask=None):
    return params(x_q, x_kv, key_mask)


def mab(X, Y, params, key_mask=None):
    return params(X, Y, key_mask)


def sab(X, params, mask=None):
    return params(X, X, mask) if isinstance(params, MAB) else params(X, mask)


def isab(X, params, mask=None):
    return params(X, mask)


def pma(Z, params, mask=None):
    return params(Z, mask)
