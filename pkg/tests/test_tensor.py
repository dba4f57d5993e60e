import numpy as np
import pytest

from beast import tensor as T
from beast.optim import AdamState, adam_step
from beast.tensor import NumericsError, ShapeError, Tape, TapeError, Tensor

from fd import check_op_gradients

F32 = np.float32
F64 = np.float64
DTYPES = [F32, F64]


def rand(rng, *shape):
    return rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# forward semantics


def test_matmul_identity():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    eye = Tensor(np.eye(3))
    out = T.matmul(eye, x)
    assert np.array_equal(out.data, x.data)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[1.0], [1.0]])
    assert np.array_equal(T.matmul(a, b).data, [[3.0], [7.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_per_row_matches_batched_values():
    rng = np.random.default_rng(7)
    a = Tensor(rand(rng, 9, 5).astype(F32))
    b = Tensor(rand(rng, 5, 4).astype(F32))
    full = T.matmul(a, b, per_row=True).data
    np.testing.assert_allclose(full, a.data @ b.data, rtol=1e-5)
    # per-row results do not depend on how many rows were present
    one = T.matmul(Tensor(a.data[3:4]), b, per_row=True).data
    assert np.array_equal(full[3:4], one)


def test_softmax_rows():
    out = T.softmax_rows(Tensor([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[0.5, 0.5]])
    big = T.softmax_rows(Tensor([[1000.0, 0.0]]))
    np.testing.assert_allclose(big.data, [[1.0, 0.0]], atol=1e-12)
    rng = np.random.default_rng(0)
    r = T.softmax_rows(Tensor(rand(rng, 6, 9)))
    np.testing.assert_allclose(r.data.sum(axis=1), np.ones(6), atol=1e-6)


def test_layernorm_constant_row_zeros():
    x = Tensor(np.full((2, 8), 3.7))
    out = T.layernorm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-4)


def test_layernorm_zero_mean():
    rng = np.random.default_rng(1)
    x = Tensor(rand(rng, 5, 16))
    out = T.layernorm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
    np.testing.assert_allclose(out.data.mean(axis=1), np.zeros(5), atol=1e-6)


def test_conv2d_delta_kernel_is_causal_identity():
    rng = np.random.default_rng(2)
    x = Tensor(rand(rng, 1, 6, 5))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 2, 1] = 1.0  # newest time tap, centre frequency tap
    out = T.conv2d(x, Tensor(k))
    np.testing.assert_allclose(out.data, x.data, atol=1e-6)


def test_conv2d_ones_interior():
    x = Tensor(np.ones((1, 4, 6)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, k)
    # interior frame/bin sees the full 3x3 window
    assert out.data[0, 3, 3] == pytest.approx(9.0)


def test_conv2d_never_reads_future_frames():
    rng = np.random.default_rng(3)
    x = rand(rng, 2, 8, 6).astype(F32)
    k = Tensor(rand(rng, 3, 2, 3, 3).astype(F32))
    base = T.conv2d(Tensor(x), k).data
    x2 = x.copy()
    x2[:, 5:, :] += 10.0
    pert = T.conv2d(Tensor(x2), k).data
    assert np.array_equal(base[:, :5, :], pert[:, :5, :])


def test_maxpool_freq():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    out = T.maxpool_freq(x, 2)
    np.testing.assert_allclose(out.data, [[[2.0, 4.0]]])
    same = T.maxpool_freq(x, 1)
    np.testing.assert_allclose(same.data, x.data)
    with pytest.raises(ShapeError):
        T.maxpool_freq(x, 3)


def test_dropout_identity_and_determinism():
    rng = np.random.default_rng(4)
    x = Tensor(rand(rng, 20, 10))
    assert T.dropout(x, 0.0) is x
    a = T.dropout(x, 0.5, key=(1, 2, 3)).data
    b = T.dropout(x, 0.5, key=(1, 2, 3)).data
    assert np.array_equal(a, b)
    c = T.dropout(x, 0.5, key=(1, 2, 4)).data
    assert not np.array_equal(a, c)
    # survivors are rescaled
    kept = a != 0
    np.testing.assert_allclose(a[kept], x.data[kept] * 2.0, rtol=1e-6)


def test_sigmoid_zero():
    assert T.sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)


def test_concat_and_slice_roundtrip():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.arange(9.0).reshape(3, 3))
    cat = T.concat([a, b], axis=0)
    assert cat.shape == (5, 3)
    back = T.slice_axis(cat, 0, 2, 3)
    assert np.array_equal(back.data, b.data)


def test_nan_inputs_raise():
    x = Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NumericsError):
        T.add(x, x)


@pytest.mark.filterwarnings("ignore:overflow")
def test_overflow_raises_not_propagates():
    x = Tensor(np.array([3.0e38], dtype=F32))
    with pytest.raises(NumericsError):
        T.mul(x, x)


# ---------------------------------------------------------------------------
# tape / backward


def test_backward_sum_gives_ones():
    w = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = T.sum_all(w)
    tape.backward(loss)
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_matmul_rule():
    rng = np.random.default_rng(5)
    a = Tensor(rand(rng, 3, 4), requires_grad=True)
    b = Tensor(rand(rng, 4, 2), requires_grad=True)
    with Tape() as tape:
        loss = T.sum_all(T.matmul(a, b))
    tape.backward(loss)
    g = np.ones((3, 2))
    np.testing.assert_allclose(a.grad, g @ b.data.T, rtol=1e-6)
    np.testing.assert_allclose(b.grad, a.data.T @ g, rtol=1e-6)


def test_backward_requires_scalar_and_taped_loss():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        out = T.add(w, w)
    with pytest.raises(TapeError):
        tape.backward(out)
    with pytest.raises(TapeError):
        Tape().backward(Tensor(np.zeros(())))


def test_tape_cleared_after_backward():
    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = T.sum_all(T.mul(w, w))
    tape.backward(loss)
    assert len(tape) == 0


def test_reused_tensor_accumulates_grads():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = T.sum_all(T.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


# ---------------------------------------------------------------------------
# finite-difference checks, f32 and f64 modes


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_matmul(dtype):
    rng = np.random.default_rng(10)
    check_op_gradients(
        lambda ts: T.sum_all(T.mul(T.matmul(ts[0], ts[1]), ts[2])),
        [rand(rng, 5, 4), rand(rng, 4, 3), rand(rng, 5, 3)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_softmax(dtype):
    rng = np.random.default_rng(11)
    check_op_gradients(
        lambda ts: T.sum_all(T.mul(T.softmax_rows(ts[0]), ts[1])),
        [rand(rng, 4, 6), rand(rng, 4, 6)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_layernorm(dtype):
    rng = np.random.default_rng(12)
    check_op_gradients(
        lambda ts: T.sum_all(T.mul(T.layernorm(ts[0], ts[1], ts[2]), ts[3])),
        [rand(rng, 3, 8), rand(rng, 8), rand(rng, 8), rand(rng, 3, 8)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_conv2d(dtype):
    rng = np.random.default_rng(13)
    check_op_gradients(
        lambda ts: T.sum_all(T.mul(T.conv2d(ts[0], ts[1]), ts[2])),
        [rand(rng, 2, 5, 4), rand(rng, 3, 2, 3, 3), rand(rng, 3, 5, 4)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_maxpool(dtype):
    rng = np.random.default_rng(14)
    # keep entries well separated so finite differences do not cross argmax ties
    x = rand(rng, 2, 3, 8) * 4.0
    check_op_gradients(
        lambda ts: T.sum_all(T.mul(T.maxpool_freq(ts[0], 2), ts[1])),
        [x, rand(rng, 2, 3, 4)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_elementwise_suite(dtype):
    rng = np.random.default_rng(15)

    def build(ts):
        a = T.relu(ts[0])
        b = T.sigmoid(ts[1])
        c = T.add(T.mul(a, b), ts[2])
        d = T.concat([c, ts[3]], axis=0)
        return T.sum_all(T.mul(T.slice_axis(d, 0, 1, 4), ts[4]))

    check_op_gradients(
        build,
        [rand(rng, 3, 5) + 0.5, rand(rng, 3, 5), rand(rng, 3, 5), rand(rng, 2, 5), rand(rng, 4, 5)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_dropout(dtype):
    rng = np.random.default_rng(16)
    check_op_gradients(
        lambda ts: T.sum_all(T.dropout(ts[0], 0.4, key=(9, 9))),
        [rand(rng, 6, 6)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_bce(dtype):
    rng = np.random.default_rng(17)
    p = rng.uniform(0.1, 0.9, size=(3, 7))
    y = rng.uniform(0.0, 1.0, size=(3, 7))
    check_op_gradients(lambda ts: T.bce_mean(T.sigmoid(ts[0]), y), [p], dtype=dtype)


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_reductions_and_views(dtype):
    rng = np.random.default_rng(18)

    def build(ts):
        m = T.mean_rows(ts[0])
        flat = T.time_major(ts[1])
        prod = T.matmul(m, T.transpose(T.slice_axis(flat, 0, 0, 1)))
        return T.sum_all(T.add(prod, T.sum_all(T.reshape(ts[2], (6,)))))

    check_op_gradients(
        build,
        [rand(rng, 4, 6), rand(rng, 2, 3, 3), rand(rng, 2, 3)],
        dtype=dtype,
    )


@pytest.mark.parametrize("dtype", DTYPES)
def test_grad_take_per_row(dtype):
    rng = np.random.default_rng(19)
    idx = rng.integers(0, 5, size=(4, 3))
    check_op_gradients(
        lambda ts: T.sum_all(T.mul(T.take_per_row(ts[0], idx), ts[1])),
        [rand(rng, 4, 5), rand(rng, 4, 3)],
        dtype=dtype,
    )


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_grad_no_move():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st = AdamState([p], lr=0.1)
    adam_step([p], [np.zeros(2)], st)
    np.testing.assert_allclose(p.data, [1.0, -2.0])


def test_adam_descends_quadratic():
    p = Tensor(np.array([1.0]), requires_grad=True)
    st = AdamState([p], lr=0.1)
    adam_step([p], [2.0 * p.data], st)
    assert abs(p.data[0]) < 1.0


def test_adam_converges_two_var_quadratic():
    p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    st = AdamState([p], lr=0.1)
    for _ in range(200):
        adam_step([p], [2.0 * p.data], st)
    loss = float((p.data ** 2).sum())
    assert loss < 1e-4


def test_adam_deterministic():
    runs = []
    for _ in range(2):
        p = Tensor(np.array([0.5, 0.25]), requires_grad=True)
        st = AdamState([p], lr=0.05)
        for _ in range(50):
            adam_step([p], [np.cos(p.data)], st)
        runs.append(p.data.copy())
    assert np.array_equal(runs[0], runs[1])
