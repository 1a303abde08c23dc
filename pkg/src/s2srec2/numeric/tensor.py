"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active, so plain
forward passes (inference) carry no bookkeeping.  Parameters are tensors
created with ``requires_grad=True``; their ``grad`` arrays accumulate across
backward calls until :meth:`Tensor.zero_grad`.
"""
import threading

import numpy as np

from . import kernels

_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class MaskError(ValueError):
    """Raised when a mask leaves nothing to normalise over."""


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tracked")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._tracked = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad[...] = 0.0

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; ops executed inside the block are appended in
    execution order and replayed in reverse by :meth:`backward`.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, backward):
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.requires_grad:
            loss.grad += 1.0
            return
        pending = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t._tracked:
                    continue
                if t.requires_grad:
                    t.grad += gi
                else:
                    key = id(t)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi

    def clear(self):
        self.records.clear()


def backward(loss, tape=None):
    """Populate ``grad`` on every parameter that ``loss`` depends on."""
    tape = tape if tape is not None else active_tape()
    if tape is None:
        raise RuntimeError("backward called with no tape; run the forward pass inside `with Tape():`")
    tape.backward(loss)


# --------------------------------------------------------------------------
# helpers


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._tracked = False
    tape = active_tape()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _rows(a):
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


# --------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from None
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x):
    keep = x.data > 0
    return _result(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def sigmoid(x):
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


# --------------------------------------------------------------------------
# shape and reduction


def reshape(x, shape):
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def swapaxes(x, a, b):
    return _result(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def tsum(x, axis=None, keepdims=False):
    src = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def take(table, ids):
    """Row lookup ``table[ids]`` (embedding gather)."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        bad = ids[(ids < 0) | (ids >= rows)].reshape(-1)[0]
        raise IndexError(f"row id {int(bad)} out of range for table with {rows} rows")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _result(table.data[ids], (table,), back)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Batched matrix product over the last two axes (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a._tracked else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b._tracked else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _result(data, (a, b), back)


# --------------------------------------------------------------------------
# normalisation


def _prepare_mask(mask, shape):
    if mask is None:
        return np.empty((0, 0), dtype=np.uint8)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    return np.ascontiguousarray(m.reshape(-1, shape[-1]), dtype=np.uint8)


def softmax(x, mask=None):
    """Softmax along the last axis; entries where ``mask`` is False get exactly 0.

    ``mask`` broadcasts against ``x``.  A row with no unmasked entry raises
    :class:`MaskError`.
    """
    x = as_tensor(x)
    m = _prepare_mask(mask, x.shape)
    try:
        y = kernels.softmax_fwd(_rows(x.data), m).reshape(x.shape)
    except ValueError as exc:
        raise MaskError(str(exc)) from None

    def back(g):
        return (kernels.softmax_bwd(_rows(y), _rows(g)).reshape(x.shape),)

    return _result(y, (x,), back)


softmax_rows = softmax


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise each row (last axis) to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {n}")
    y, xhat, rstd = kernels.layernorm_fwd(_rows(x.data), gamma.data, beta.data, float(eps))

    def back(g):
        gx, dgamma, dbeta = kernels.layernorm_bwd(_rows(g), xhat, rstd, gamma.data)
        return gx.reshape(x.shape), dgamma, dbeta

    return _result(y.reshape(x.shape), (x, gamma, beta), back)


layer_norm_rows = layer_norm


# --------------------------------------------------------------------------
# losses


def cross_entropy_from_logits(logits, targets, target_mask=None):
    """Mean of ``-log softmax(logits)[target]`` over rows with ``target_mask`` set.

    Logits of ``-1e9`` or lower act as excluded classes.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.shape}")
    b, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    keep = np.ones(b, dtype=bool) if target_mask is None else np.asarray(target_mask, dtype=bool).reshape(-1)
    if targets.shape[0] != b or keep.shape[0] != b:
        raise ShapeError(f"targets/mask length must equal batch size {b}")
    if not keep.any():
        raise ValueError("cross entropy needs at least one unmasked target")
    live = targets[keep]
    if live.min() < 0 or live.max() >= v:
        raise IndexError(f"target index out of range [0, {v})")
    safe = np.where(keep, targets, 0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp_t = z[np.arange(b), safe] - lse
    count = float(keep.sum())
    loss = -(logp_t * keep).sum() / count

    def back(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(b), safe] -= 1.0
        p *= (keep / count)[:, None]
        return (p * g,)

    return _result(np.asarray(loss), (logits,), back)


BCE_CLAMP = 1e-7


def binary_cross_entropy(p, y, mask=None):
    """Mean binary cross entropy of probabilities ``p`` against labels ``y``.

    ``p`` is clamped to ``[1e-7, 1 - 1e-7]`` for the value; the gradient is
    evaluated at the clamped point but not zeroed by the clamp, so saturated
    wrong predictions still get pushed back.  With ``mask`` only the selected
    entries are averaged.
    """
    p = as_tensor(p)
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), p.shape)
    w = np.ones(p.shape) if mask is None else np.broadcast_to(np.asarray(mask, dtype=np.float64), p.shape)
    n = float(w.sum())
    if n == 0:
        raise ValueError("binary cross entropy needs at least one unmasked entry")
    pc = np.clip(p.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(w * (y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))).sum() / n

    def back(g):
        return (g * w * (pc - y) / (pc * (1.0 - pc)) / n,)

    return _result(np.asarray(loss), (p,), back)


def masked_fill(x, keep, value):
    """Replace entries where ``keep`` is False by the constant ``value``."""
    x = as_tensor(x)
    keep = np.broadcast_to(np.asarray(keep, dtype=bool), x.shape)
    return _result(np.where(keep, x.data, value), (x,), lambda g: (g * keep,))
