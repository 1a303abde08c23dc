import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from s2srec2.numeric import (
    Adam,
    AdamState,
    MaskError,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    backward,
    binary_cross_entropy,
    cross_entropy_from_logits,
    finite_difference_gradient,
    layer_norm,
    masked_fill,
    matmul,
    relative_error,
    relu,
    sigmoid,
    softmax,
    take,
)
from s2srec2.numeric import _pykernels
from s2srec2.numeric.kernels import BACKEND, available_backends

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- matmul


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)
    np.testing.assert_array_equal(matmul(a, Tensor(np.zeros((2, 2)))).data, np.zeros((2, 2)))
    np.testing.assert_array_equal(matmul(a, Tensor([[5.0], [6.0]])).data, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 2, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)

    def loss():
        return (matmul(a, b) * matmul(a, b)).sum()

    with Tape() as tape:
        tape.backward(loss())
    for t in (a, b):
        fd = finite_difference_gradient(lambda: loss().item(), t)
        assert relative_error(t.grad, fd, 1e-6) < 1e-6


# ---------------------------------------------------------------- softmax


def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]], atol=1e-15)
    for c in (-7.0, 0.0, 3.5, 800.0):
        np.testing.assert_allclose(softmax(Tensor([[c, c, c]])).data, [[1 / 3] * 3], atol=1e-15)
    y = softmax(Tensor([[math.log(1), math.log(2), math.log(3)]])).data
    np.testing.assert_allclose(y, [[1 / 6, 2 / 6, 3 / 6]], atol=1e-15)


def test_softmax_masked_entries_exactly_zero():
    x = Tensor([[1.0, 5.0, 2.0], [0.3, 0.2, 0.1]])
    mask = np.array([[True, False, True], [False, False, True]])
    y = softmax(x, mask).data
    assert y[0, 1] == 0.0 and y[1, 0] == 0.0 and y[1, 1] == 0.0
    assert y[1, 2] == 1.0
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_fully_masked_row_raises():
    with pytest.raises(MaskError):
        softmax(Tensor([[1.0, 2.0]]), np.array([[False, False]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.floats(-50, 50))
def test_softmax_rows_normalised_and_shift_invariant(x, c):
    y = softmax(Tensor(x)).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(softmax(Tensor(x + c)).data, y, atol=1e-12)


def test_softmax_stable_for_huge_logits():
    y = softmax(Tensor([[1000.0, 1000.0, -1000.0]])).data
    np.testing.assert_allclose(y, [[0.5, 0.5, 0.0]], atol=1e-15)


# ---------------------------------------------------------------- layer norm


def test_layer_norm_examples():
    one, zero = np.ones(4), np.zeros(4)
    np.testing.assert_array_equal(layer_norm(Tensor(np.full((1, 4), 3.3)), one, zero).data, np.zeros((1, 4)))
    y = layer_norm(Tensor([[1.0, -1.0]]), np.ones(2), np.zeros(2)).data
    np.testing.assert_allclose(y, [[1.0, -1.0]], atol=1e-5)
    b = np.array([0.5, -2.0, 7.0, 0.0])
    y = layer_norm(Tensor(np.random.default_rng(1).standard_normal((3, 4))), np.zeros(4), b).data
    np.testing.assert_array_equal(y, np.tile(b, (3, 1)))


def test_layer_norm_affine_shape_error():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.ones((2, 3))), np.ones(2), np.zeros(3))


# ---------------------------------------------------------------- losses


def test_cross_entropy_examples():
    assert cross_entropy_from_logits(Tensor(np.zeros((1, 4))), [2]).item() == pytest.approx(math.log(4), abs=1e-12)
    logits = np.zeros((1, 5))
    logits[0, 3] = 100.0
    assert cross_entropy_from_logits(Tensor(logits), [3]).item() < 1e-12
    logits = np.array([[9.0, -3.0], [0.0, 0.0], [5.0, 5.0]])
    val = cross_entropy_from_logits(Tensor(logits), [0, 1, 1], [False, True, False]).item()
    assert val == pytest.approx(math.log(2), abs=1e-12)


def test_cross_entropy_errors():
    with pytest.raises(IndexError):
        cross_entropy_from_logits(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy_from_logits(Tensor(np.zeros((2, 3))), [0, 1], [False, False])


def test_binary_cross_entropy_examples():
    assert binary_cross_entropy(Tensor([1.0]), [1.0]).item() < 2e-7
    assert binary_cross_entropy(Tensor([0.5]), [1.0]).item() == pytest.approx(math.log(2), abs=1e-12)
    assert binary_cross_entropy(Tensor([0.5, 0.5]), [1.0, 0.0]).item() == pytest.approx(math.log(2), abs=1e-12)


def test_binary_cross_entropy_saturated_still_has_gradient():
    p = Tensor([0.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(binary_cross_entropy(p, [1.0]))
    assert p.grad[0] < 0


def test_binary_cross_entropy_mask():
    p = Tensor([0.5, 0.9, 0.1])
    full = binary_cross_entropy(Tensor([0.5]), [1.0]).item()
    assert binary_cross_entropy(p, [1.0, 0.0, 1.0], [True, False, False]).item() == pytest.approx(full)


# ---------------------------------------------------------------- autodiff


def test_backward_examples():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        tape.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        tape.backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    x = Tensor([1.0, -3.0, 0.5], requires_grad=True)
    with Tape():
        y = x + 0.0
        backward(y.sum() + x.sum())
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with pytest.raises(ShapeError):
            tape.backward(x * 2.0)


def test_backward_without_tape_raises():
    with pytest.raises(RuntimeError):
        backward(Tensor(1.0))


def test_ops_outside_tape_record_nothing():
    tape = Tape()
    x = Tensor([1.0], requires_grad=True)
    _ = (x * 3.0).sum()
    assert len(tape) == 0


def _composite_loss(params, ids, mask):
    w, e, gamma, beta = params
    h = take(e, ids)
    h = layer_norm(relu(matmul(h, w)), gamma, beta)
    s = softmax(h, mask[:, None, :])
    z = (s * h).sum(axis=-1).mean(axis=-1)
    return binary_cross_entropy(sigmoid(z), [1.0, 0.0]) + (h * h).mean()


def test_composite_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    params = [
        Tensor(rng.standard_normal((4, 5)), requires_grad=True),
        Tensor(rng.standard_normal((6, 4)), requires_grad=True),
        Tensor(1 + 0.1 * rng.standard_normal(5), requires_grad=True),
        Tensor(0.1 * rng.standard_normal(5), requires_grad=True),
    ]
    ids = np.array([[1, 3, 3], [5, 0, 2]])
    mask = np.array([[True, True, False, True, True], [True, False, True, True, True]])
    with Tape() as tape:
        tape.backward(_composite_loss(params, ids, mask))
    for p in params:
        fd = finite_difference_gradient(lambda: _composite_loss(params, ids, mask).item(), p)
        assert relative_error(p.grad, fd, 1e-6) < 1e-4


def test_cross_entropy_gradient_with_mask():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    keep = np.array([True, False, True])

    def loss():
        return cross_entropy_from_logits(masked_fill(x, np.array([1, 1, 0, 1], bool), -1e9), [1, 2, 3], keep)

    with Tape() as tape:
        tape.backward(loss())
    fd = finite_difference_gradient(lambda: loss().item(), x)
    np.testing.assert_allclose(x.grad, fd, atol=1e-8)
    assert np.all(x.grad[1] == 0) and np.all(x.grad[:, 2] == 0)


def test_take_out_of_range():
    with pytest.raises(IndexError):
        take(Tensor(np.zeros((3, 2))), np.array([0, 3]))


def test_take_accumulates_repeated_rows():
    e = Tensor(np.zeros((3, 2)), requires_grad=True)
    with Tape() as tape:
        tape.backward(take(e, np.array([1, 1, 2])).sum())
    np.testing.assert_array_equal(e.grad, [[0, 0], [2, 2], [1, 1]])


def test_operations_are_deterministic():
    rng = np.random.default_rng(8)
    params = [Tensor(rng.standard_normal(s), requires_grad=True) for s in ((4, 5), (6, 4), (5,), (5,))]
    ids = np.array([[1, 2, 3], [4, 5, 0]])
    mask = np.ones((2, 5), bool)
    a = _composite_loss(params, ids, mask).data.tobytes()
    b = _composite_loss(params, ids, mask).data.tobytes()
    assert a == b


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_leaves_params():
    p = np.array([1.0, -2.0, 3.0])
    adam_step([p], [np.zeros(3)], AdamState())
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])


def test_adam_first_step():
    p = np.zeros(4)
    adam_step([p], [np.ones(4)], AdamState(lr=1e-4))
    np.testing.assert_allclose(p, -1e-4 / (1 + 1e-8), rtol=1e-12)


def test_adam_matches_reference_over_several_steps():
    rng = np.random.default_rng(5)
    p = rng.standard_normal(6)
    ref = p.copy()
    m = np.zeros(6)
    v = np.zeros(6)
    state = AdamState(lr=0.01)
    for t in range(1, 6):
        g = rng.standard_normal(6)
        adam_step([p], [g], state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-13)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([np.zeros(3)], [np.zeros(4)], AdamState())
    with pytest.raises(ShapeError):
        adam_step([np.zeros(3)], [], AdamState())


def test_adam_wrapper_steps_tensors():
    w = Tensor([1.0, 1.0], requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(50):
        opt.zero_grad()
        with Tape() as tape:
            tape.backward(((w - 3.0) * (w - 3.0)).sum())
        opt.step()
    assert np.all(np.abs(w.data - 3.0) < 0.5)


# ---------------------------------------------------------------- finite differences


def test_finite_difference_examples():
    x = np.random.default_rng(0).standard_normal((2, 3))
    np.testing.assert_allclose(finite_difference_gradient(lambda a: a.sum(), x), np.ones((2, 3)), atol=1e-8)
    np.testing.assert_allclose(finite_difference_gradient(lambda a: (a * a).sum(), np.array([3.0])), [6.0], atol=1e-6)


def test_finite_difference_restores_input():
    t = Tensor([0.1, 0.2, 0.3])
    before = t.data.copy()
    finite_difference_gradient(lambda: (t.data**3).sum(), t)
    np.testing.assert_array_equal(t.data, before)


# ---------------------------------------------------------------- backends


def test_backend_is_reported():
    assert BACKEND in ("cython", "numpy")
    assert "numpy" in available_backends()


@pytest.mark.skipif("cython" not in available_backends(), reason="compiled kernels not built")
@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 7), elements=finite), st.integers(0, 2**32 - 1))
def test_backends_agree(x, seed):
    c = available_backends()["cython"]
    rng = np.random.default_rng(seed)
    mask = (rng.random(x.shape) < 0.7).astype(np.uint8)
    mask[:, 0] = 1
    empty = np.zeros((0, 0), np.uint8)
    for m in (empty, mask):
        np.testing.assert_allclose(c.softmax_fwd(x, m), _pykernels.softmax_fwd(x, m), rtol=0, atol=1e-14)
    y = _pykernels.softmax_fwd(x, mask)
    gy = rng.standard_normal(x.shape)
    np.testing.assert_allclose(c.softmax_bwd(y, gy), _pykernels.softmax_bwd(y, gy), atol=1e-13)
    gamma, beta = rng.standard_normal(7), rng.standard_normal(7)
    for a, b in zip(c.layernorm_fwd(x, gamma, beta, 1e-5), _pykernels.layernorm_fwd(x, gamma, beta, 1e-5)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    _, xhat, rstd = _pykernels.layernorm_fwd(x, gamma, beta, 1e-5)
    for a, b in zip(c.layernorm_bwd(gy, xhat, rstd, gamma), _pykernels.layernorm_bwd(gy, xhat, rstd, gamma)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


@pytest.mark.skipif("cython" not in available_backends(), reason="compiled kernels not built")
def test_compiled_softmax_rejects_fully_masked_row():
    c = available_backends()["cython"]
    with pytest.raises(ValueError):
        c.softmax_fwd(np.zeros((2, 3)), np.array([[1, 0, 0], [0, 0, 0]], np.uint8))


def test_pure_python_fallback_selected_by_env(tmp_path):
    import subprocess
    import sys

    code = "from s2srec2.numeric.kernels import BACKEND; print(BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code], env={**__import__("os").environ, "S2S_PURE_PYTHON": "1"},
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
