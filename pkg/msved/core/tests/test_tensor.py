import sys

import numpy as np
import pytest

from msved.common.errors import ContractError, DimensionError, NumericError
from msved.core import tensor as T
from msved.core.gradcheck import finite_difference_check

TOL = 1e-4


def weighted_sum(out: T.Tensor, seed: int = 7) -> T.Tensor:
    """sum(out * W) for a fixed random W, so every output coordinate matters."""
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return T.sum(T.mul(out, T.constant(weights)))


def test_sigmoid_at_zero():
    assert T.sigmoid(T.constant([0.0])).item() == 0.5


def test_sigmoid_gradient_at_zero():
    x = T.parameter([0.0])
    T.backward(T.sum(T.sigmoid(x)))
    assert x.grad[0] == pytest.approx(0.25, abs=1e-15)


def test_softmax_of_equal_logits_is_uniform():
    out = T.softmax(T.constant(np.full((1, 4), 3.7)))
    np.testing.assert_allclose(out.values, [[0.25] * 4], atol=1e-15)


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(0)
    out = T.softmax(T.constant(rng.normal(scale=20.0, size=(16, 16))), tau=0.3)
    assert np.all(out.values >= 0.0)
    np.testing.assert_allclose(out.values.sum(axis=-1), np.ones(16), atol=1e-12)


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(1).normal(size=(5, 7))
    direct = np.log(np.exp(x) / np.exp(x).sum(axis=-1, keepdims=True))
    np.testing.assert_allclose(T.log_softmax(T.constant(x)).values, direct, atol=1e-12)
    np.testing.assert_allclose(np.log(T.softmax(T.constant(x)).values), direct, atol=1e-12)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ContractError):
        T.softmax(T.constant([[1.0, 2.0]]), tau=0.0)


def test_masked_cross_entropy_zeroes_masked_rows():
    logits = T.constant(np.log([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]]))
    out = T.masked_cross_entropy(logits, [0, 1], [1.0, 0.0])
    np.testing.assert_allclose(out.values, [np.log(2.0), 0.0], atol=1e-12)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError) as info:
        T.add(T.constant(np.zeros((2, 3))), T.constant(np.zeros((3, 2))))
    assert "(2, 3)" in str(info.value) and "(3, 2)" in str(info.value)
    with pytest.raises(ValueError):
        T.matmul(T.constant(np.zeros((2, 3))), T.constant(np.zeros((2, 3))))


def test_embedding_rejects_out_of_range_ids():
    with pytest.raises(ContractError):
        T.embedding(T.parameter(np.zeros((4, 2))), [0, 4])


def test_backward_needs_a_scalar():
    x = T.parameter(np.ones((2, 2)))
    with pytest.raises(ContractError):
        T.backward(T.mul_scalar(x, 2.0))


def test_gradient_of_a_constant_is_zero():
    x = T.parameter(np.ones(3))
    loss = T.add(T.sum(T.constant(np.arange(3.0))), T.sum(T.mul_scalar(x, 0.0)))
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_sum_of_matrix_product_gradient():
    rng = np.random.default_rng(2)
    b = T.constant(rng.normal(size=(4, 3)))
    a = T.parameter(rng.normal(size=(5, 4)))
    error = finite_difference_check(lambda x: T.sum(T.matmul(x, b)), a)
    assert error < 1e-6
    np.testing.assert_allclose(a.grad, np.ones((5, 3)) @ b.values.T, atol=1e-12)


def test_gradients_accumulate_across_uses():
    rng = np.random.default_rng(3)
    x = T.parameter(rng.normal(size=(3, 3)))

    def f(t):
        return T.sum(T.tanh(T.matmul(t, t)))

    T.backward(f(x))
    single = x.grad.copy()
    x.grad = None
    T.backward(T.add(f(x), f(x)))
    np.testing.assert_array_equal(x.grad, 2.0 * single)


def test_backward_adds_onto_existing_grads():
    x = T.parameter([1.0, 2.0])
    T.backward(T.sum(T.mul(x, x)))
    T.backward(T.sum(T.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    T.zero_grads([x])
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_no_grad_records_nothing():
    x = T.parameter([1.0])
    with T.no_grad():
        y = T.exp(x)
    assert not y.requires_grad and y.is_leaf


def test_checked_mode_rejects_non_finite_values():
    with T.checked_mode():
        with pytest.raises(NumericError):
            T.log(T.constant([0.0, 1.0]))
    # outside checked mode the same call is allowed
    with T.checked_mode(False):
        assert np.isneginf(T.log(T.constant([0.0])).values[0])


def test_suite_runs_in_checked_mode():
    assert T.is_checked()
    with T.checked_mode(False):
        assert not T.is_checked()
    assert T.is_checked()


def test_tape_is_in_execution_order():
    x = T.parameter(np.ones((2, 2)))
    y = T.tanh(T.matmul(x, x))
    loss = T.sum(T.add(y, T.sigmoid(y)))
    tape = T.ComputationTape.from_output(loss)
    position = {id(n): i for i, n in enumerate(tape.nodes)}
    for node in tape.nodes:
        for parent in node.parents:
            if parent.requires_grad:
                assert position[id(parent)] < position[id(node)]
    assert len({id(n) for n in tape.nodes}) == len(tape)


def test_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(11)
        x = T.parameter(rng.normal(size=(4, 4)))
        w = T.parameter(rng.normal(size=(4, 4)))
        loss = T.sum(T.softplus(T.matmul(T.tanh(T.matmul(x, w)), w)))
        T.backward(loss)
        return loss.values, x.grad, w.grad

    first, second = run(), run()
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def _unary_cases():
    return {
        "sigmoid": (T.sigmoid, None),
        "tanh": (T.tanh, None),
        "softplus": (T.softplus, None),
        "exp": (T.exp, None),
        "log": (T.log, "positive"),
        "neg": (T.neg, None),
        "mul_scalar": (lambda x: T.mul_scalar(x, -1.7), None),
        "add_scalar": (lambda x: T.add_scalar(x, 0.3), None),
        "softmax": (lambda x: T.softmax(x, tau=0.7), None),
        "log_softmax": (T.log_softmax, None),
        "columns": (lambda x: T.columns(x, 1, 3), None),
        "sum_axis0": (lambda x: T.sum(x, axis=0), None),
        "sum_axis1": (lambda x: T.sum(x, axis=-1), None),
        "mean": (T.mean, None),
        "concat_self": (lambda x: T.concat([x, T.tanh(x)], axis=-1), None),
        "stack_self": (lambda x: T.stack([x, T.sigmoid(x)], axis=1), None),
        "matmul_self": (lambda x: T.matmul(x, T.constant(np.ones((4, 2)))), None),
    }


@pytest.mark.parametrize("name", sorted(_unary_cases()))
def test_primitive_gradients(name):
    op, domain = _unary_cases()[name]
    rng = np.random.default_rng(sum(map(ord, name)))
    values = rng.normal(size=(3, 4))
    if domain == "positive":
        values = np.abs(values) + 0.5
    x = T.parameter(values)
    assert finite_difference_check(lambda t: weighted_sum(op(t)), x) < TOL


def test_binary_primitive_gradients():
    rng = np.random.default_rng(5)
    other = T.constant(rng.normal(size=(3, 4)))
    for op in (T.add, T.sub, T.mul):
        x = T.parameter(rng.normal(size=(3, 4)))
        assert finite_difference_check(lambda t: weighted_sum(op(t, other)), x) < TOL
        x = T.parameter(rng.normal(size=(3, 4)))
        assert finite_difference_check(lambda t: weighted_sum(op(other, t)), x) < TOL


def test_affine_gradients_for_every_input():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    checks = [
        (lambda t: weighted_sum(T.affine(t, T.constant(w), T.constant(b))), x),
        (lambda t: weighted_sum(T.affine(T.constant(x), t, T.constant(b))), w),
        (lambda t: weighted_sum(T.affine(T.constant(x), T.constant(w), t)), b),
    ]
    for f, values in checks:
        assert finite_difference_check(f, T.parameter(values)) < TOL


def test_embedding_gradient_touches_only_used_rows():
    rng = np.random.default_rng(8)
    table = T.parameter(rng.normal(size=(6, 3)))
    ids = [1, 4, 1]
    assert finite_difference_check(lambda t: weighted_sum(T.embedding(t, ids)), table) < TOL
    unused = [0, 2, 3, 5]
    np.testing.assert_array_equal(table.grad[unused], np.zeros((4, 3)))
    assert np.all(table.grad[[1, 4]] != 0.0)


def test_masked_cross_entropy_gradient():
    rng = np.random.default_rng(9)
    logits = T.parameter(rng.normal(size=(4, 5)))
    targets, mask = [0, 3, 2, 4], [1.0, 1.0, 0.0, 1.0]
    f = lambda t: T.sum(T.masked_cross_entropy(t, targets, mask))  # noqa: E731
    assert finite_difference_check(f, logits) < TOL
    np.testing.assert_array_equal(logits.grad[2], np.zeros(5))


def test_weighted_combine_gradients():
    rng = np.random.default_rng(10)
    weights = rng.normal(size=(2, 3))
    items = rng.normal(size=(2, 3, 4))
    f_w = lambda t: weighted_sum(T.weighted_combine(t, T.constant(items)))  # noqa: E731
    f_i = lambda t: weighted_sum(T.weighted_combine(T.constant(weights), t))  # noqa: E731
    assert finite_difference_check(f_w, T.parameter(weights)) < TOL
    assert finite_difference_check(f_i, T.parameter(items)) < TOL


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
