import numpy as np
import pytest

from neurospeech.numerics import (
    AdamW,
    AdamWState,
    F,
    Linear,
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    adamw_step,
    grad_check,
    stream,
)


def test_softmax_uniform():
    out = F.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-6)


def test_softmax_mask_zeroes_excluded():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    out = F.softmax(x, mask=np.array([[True, True, False]]))
    assert out.data[0, 2] == 0.0
    np.testing.assert_allclose(out.data.sum(), 1.0, rtol=1e-6)


def test_softmax_stable_for_large_logits():
    out = F.softmax(Tensor(np.array([1000.0, 1000.0], dtype=np.float32)))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_layernorm_constant_vector_is_zero():
    out = F.layer_norm(Tensor(np.full((2, 5), 3.0)))
    assert np.all(out.data == 0.0)


def test_matmul_identity():
    x = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
    out = F.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_nan_raises():
    with pytest.raises(NonFiniteError):
        F.log(Tensor([-1.0]))


def test_square_grad():
    x = Parameter(np.array(3.0))
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_product_grad():
    x, y = Parameter(np.array(2.0)), Parameter(np.array(5.0))
    (x * y).backward()
    assert (x.grad, y.grad) == (pytest.approx(5.0), pytest.approx(2.0))


def test_backward_needs_scalar():
    x = Parameter(np.ones(3))
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_grad_accumulates_exactly():
    rng = np.random.default_rng(1)
    w = Parameter(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 4)))

    def loss():
        return F.tanh(F.matmul(x, w)).sum()

    loss().backward()
    once = w.grad.copy()
    loss().backward()
    np.testing.assert_array_equal(w.grad, 2 * once)


def _mlp(seed=0):
    rng = stream(seed, "mlp")
    l1, l2 = Linear(6, 8, rng), Linear(8, 3, rng)
    x = Tensor(rng.normal(size=(5, 6)))
    y = np.array([0, 1, 2, 1, 0])

    def fn():
        return F.cross_entropy(l2(F.gelu(l1(x))), y)

    return fn, l1.parameters() + l2.parameters()


def test_mlp_finite_differences():
    fn, params = _mlp()
    assert grad_check(fn, params, eps=1e-3) < 1e-3


def test_linear_layer_finite_differences():
    rng = stream(3, "lin")
    lin = Linear(5, 4, rng)
    x = Tensor(rng.normal(size=(7, 5)))
    assert grad_check(lambda: (lin(x) ** 2).mean(), lin.parameters(), eps=1e-3) < 1e-4


@pytest.mark.parametrize(
    "op",
    [
        lambda a: F.softmax(a, axis=-1).sum(axis=0).log().sum(),
        lambda a: (F.log_softmax(a, axis=0) * np.arange(12).reshape(3, 4)).sum(),
        lambda a: F.layer_norm(a).sum() + (F.layer_norm(a) ** 2 * np.arange(12).reshape(3, 4)).sum(),
        lambda a: F.concat([a, a * 2.0], axis=1).mean() + F.transpose(a)[1:3].sum(),
        lambda a: F.l2_normalize(a).sum(axis=0).sum() + F.stack([a, a], axis=1).reshape(3, 8)[:, ::3].sum(),
        lambda a: F.embedding(a, [0, 2, 2, 1]).exp().sum(),
        lambda a: F.where(a.data > 0, a * 3.0, a).sum(),
    ],
)
def test_op_gradients(op):
    a = Parameter(np.random.default_rng(2).normal(size=(3, 4)))
    assert grad_check(lambda: op(a), [a], eps=1e-4) < 1e-4


def test_adamw_pure_decay():
    p = Parameter(np.array([2.0], dtype=np.float32))
    p.grad = np.zeros(1, dtype=np.float32)
    adamw_step([p], AdamWState(lr=0.1, weight_decay=0.01))
    np.testing.assert_allclose(p.data, 2.0 * (1 - 0.001), rtol=1e-6)


def test_adamw_first_step_on_identity():
    p = Parameter(np.array([0.0], dtype=np.float64))
    p.grad = np.ones(1)
    st = AdamWState(lr=1e-3, weight_decay=0.0)
    adamw_step([p], st)
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert st.step_count == 1


def test_adamw_missing_grad():
    with pytest.raises(RuntimeError):
        adamw_step([Parameter(np.zeros(2))], AdamWState())


def test_adamw_quadratic_decreases():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    h = a @ a.T + np.eye(4)
    x = Parameter(rng.normal(size=(4, 1)))
    opt = AdamW([x], lr=0.05, weight_decay=0.0)
    losses = []
    for _ in range(200):
        opt.zero_grad()
        loss = (F.matmul(F.transpose(x), F.matmul(Tensor(h), x))).sum() * 0.5
        loss.backward()
        opt.step()
        losses.append(loss.item())
    for i in range(0, 150):
        assert losses[i + 50] < losses[i]


def test_dropout_off_at_eval_and_scaled_in_train():
    x = Tensor(np.ones((1000,)))
    assert F.dropout(x, 0.5, None, training=False) is x
    y = F.dropout(x, 0.5, stream(0, "d"), training=True)
    assert set(np.unique(y.data)) <= {0.0, 2.0}


def test_streams_are_reproducible_and_distinct():
    a = stream(7, "x", 1).random(4)
    b = stream(7, "x", 1).random(4)
    c = stream(7, "x", 2).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
