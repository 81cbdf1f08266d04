import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from guided_distill import autodiff as ad
from guided_distill.autodiff import Adam, Parameter, SGD, Tensor, no_grad
from guided_distill.errors import ConfigError, LabelError, ShapeError, UsageError

from conftest import numeric_grad, rel_err


def check_grad(build, *arrays_in, tol=1e-6):
    params = [Parameter(a.copy()) for a in arrays_in]
    loss = build(*params)
    loss.backward()
    for p in params:
        num = numeric_grad(lambda: float(build(*[Tensor(q.data) for q in params]).data), p.data)
        assert rel_err(p.grad, num) < tol


def test_matmul_add_mul_grads(rng):
    a, b, c = rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=(1, 5))
    check_grad(lambda a, b, c: ((a @ b + c) * (a @ b)).sum(), a, b, c)


def test_sub_and_neg_grads(rng):
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    check_grad(lambda a, b: ((a - b) * (-a)).mean(), a, b)


def test_relu_grad_away_from_kink(rng):
    a = rng.normal(size=(5, 4))
    a[np.abs(a) < 0.05] = 0.3
    check_grad(lambda a: (ad.relu(a) * a).sum(), a)


def test_relu_subgradient_at_zero():
    x = Parameter(np.zeros((1, 3)))
    ad.relu(x).sum().backward()
    assert np.all(x.grad == 0.0)


def test_softmax_cross_entropy_mse_grads(rng):
    z, tgt = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    y = np.array([0, 1, 2, 2, 1, 0])
    check_grad(lambda z: ad.weighted_cross_entropy(z, y, [1.0, 1.7, 1.6]), z)
    check_grad(lambda z: (ad.softmax(z) * Tensor(tgt)).sum(), z)
    check_grad(lambda z: ad.mse_loss(z, Tensor(tgt)), z)


def test_concat_split_grads(rng):
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 6))

    def f(a, b):
        left, right = ad.split(ad.concat(a, b) * Tensor(w), 2)
        return (left * left).sum() + right.sum()
    check_grad(f, a, b)


def test_weighted_ce_matches_direct_formula(rng):
    z, y, w = rng.normal(size=(5, 3)), np.array([0, 2, 1, 1, 0]), np.array([1.0, 1.7, 1.6])
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    expected = -(w[y] * logp[np.arange(5), y]).sum() / w[y].sum()
    assert float(ad.weighted_cross_entropy(Tensor(z), y, w).data) == pytest.approx(expected, rel=1e-12)


def test_ce_input_errors():
    z = Tensor(np.zeros((2, 3)))
    with pytest.raises(LabelError):
        ad.weighted_cross_entropy(z, [0, 3])
    with pytest.raises(ConfigError):
        ad.weighted_cross_entropy(z, [0, 1], [1.0, 0.0, 1.0])


def test_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 1\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 1)))


def test_non_finite_inputs_rejected():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])


def test_backward_requires_scalar():
    x = Parameter(np.ones((2, 2)))
    with pytest.raises(UsageError):
        (x * x).backward()


def test_softmax_needs_two_classes():
    with pytest.raises(ShapeError):
        ad.softmax(Tensor(np.ones((3, 1))))


def test_gradients_accumulate_and_zero():
    x = Parameter(np.array([[2.0]]))
    (x * x).sum().backward()
    (x * x).sum().backward()
    assert x.grad[0, 0] == pytest.approx(8.0)
    x.zero_grad()
    assert x.grad is None or np.all(x.grad == 0)


def test_frozen_parameter_gets_no_grad():
    w = Parameter(np.ones((2, 2)), frozen=True)
    v = Parameter(np.ones((2, 2)))
    (w * v).sum().backward()
    assert w.grad is None or np.all(w.grad == 0)
    assert np.all(v.grad == 1.0)


def test_no_grad_records_nothing():
    x = Parameter(np.ones((2, 2)))
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad


def test_sgd_step():
    p = Parameter(np.array([[1.0, 2.0]]))
    (p * p).sum().backward()
    SGD([p], lr=0.1).step()
    np.testing.assert_allclose(p.data, [[0.8, 1.6]])


def test_adam_first_step_is_lr_times_sign():
    p = Parameter(np.array([[1.0, -3.0]]))
    (p * p).sum().backward()
    Adam([p], lr=0.01).step()
    np.testing.assert_allclose(p.data, [[0.99, -2.99]], atol=1e-7)


def test_optimizers_skip_frozen_and_validate_lr():
    p = Parameter(np.ones((1, 2)))
    q = Parameter(np.ones((1, 2)), frozen=True)
    (p * q).sum().backward()
    before = q.data.copy()
    Adam([p, q], lr=0.1).step()
    assert np.array_equal(q.data, before)
    with pytest.raises(ConfigError):
        ad.make_optimizer("sgd", [p], 0.0)
    with pytest.raises(ConfigError):
        ad.make_optimizer("rmsprop", [p], 0.1)


def test_glorot_bounds_and_determinism():
    a = ad.glorot_uniform(30, 20, np.random.default_rng(0))
    b = ad.glorot_uniform(30, 20, np.random.default_rng(0))
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= np.sqrt(6 / 50)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)), elements=finite))
def test_softmax_rows_are_distributions(z):
    p = ad.softmax(Tensor(z)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax(Tensor(z + 7.5)).data, p, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_concat_split_round_trip(n, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, p)), rng.normal(size=(n, q))
    left, right = ad.split(ad.concat(Tensor(a), Tensor(b)), p)
    assert np.array_equal(left.data, a) and np.array_equal(right.data, b)
