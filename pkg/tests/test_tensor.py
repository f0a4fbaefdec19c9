import zlib

import numpy as np
import pytest

from advseizure import nn
from advseizure.gradsuite import CASES, check_primitive
from advseizure.optim import AdamState, adam_step
from advseizure.tensor import (
    PRIMITIVES,
    Graph,
    NonScalarLossError,
    NumericFault,
    ShapeError,
    UnevaluatedGraphError,
    UnknownPrimitiveError,
    apply_primitive,
    backward,
    finite_difference_check,
    infer_shape,
)

from . import oracles


def test_relu_values():
    with Graph():
        out = apply_primitive("relu", np.array([-1.0, 0.0, 2.0]))
    assert out.data.tolist() == [0.0, 0.0, 2.0]


def test_sigmoid_at_zero():
    with Graph():
        assert apply_primitive("sigmoid", np.array([0.0])).data.tolist() == [0.5]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4))
    with Graph():
        out = apply_primitive("matmul", a, b)
    assert out.shape == (2, 4)
    np.testing.assert_allclose(out.data, oracles.matmul(a, b), rtol=0, atol=1e-12)


def test_shape_mismatch_names_primitive_and_dims():
    with Graph(), pytest.raises(ShapeError, match=r"matmul.*3 vs 2"):
        apply_primitive("matmul", np.ones((2, 3)), np.ones((2, 4)))


def test_unknown_primitive():
    with Graph(), pytest.raises(UnknownPrimitiveError):
        apply_primitive("fft", np.ones(3))


def test_missing_attribute_rejected():
    with Graph(), pytest.raises(ValueError, match="missing"):
        apply_primitive("conv2d", np.ones((1, 3, 3, 1)), np.ones((1, 1, 1, 1)))


def test_values_are_immutable():
    g = Graph()
    p = g.parameter("p", np.ones(3))
    with pytest.raises(ValueError):
        p.data[0] = 5.0


def test_nan_is_a_numeric_fault():
    g = Graph()
    with pytest.raises(NumericFault):
        g.constant([np.nan])
    x = g.parameter("x", np.array([-1.0]))
    with pytest.raises(NumericFault):
        apply_primitive("log", x)


def test_graph_is_topologically_ordered():
    g = Graph()
    a = g.parameter("a", np.ones(2))
    b = (a * 2.0 + a).sum()
    for i, node in enumerate(g.nodes):
        assert all(j < i for j in node.inputs)
    assert b.id == len(g) - 1


# ---- backward --------------------------------------------------------------


def test_gradient_of_sum_is_ones():
    g = Graph()
    p = g.parameter("p", np.arange(6.0).reshape(2, 3))
    grads = backward(g, p.sum())
    np.testing.assert_array_equal(grads["p"], np.ones((2, 3)))


def test_mse_at_target_has_zero_gradient():
    target = np.array([[1.0, -2.0], [0.5, 3.0]])
    g = Graph()
    p = g.parameter("p", target)
    grads = backward(g, nn.mse_loss(p, target))
    np.testing.assert_array_equal(grads["p"], np.zeros((2, 2)))


def test_sigmoid_of_dot_matches_central_differences():
    rng = np.random.default_rng(11)
    w0, x = rng.normal(size=5), rng.normal(size=5)

    def f(w):
        return 1.0 / (1.0 + np.exp(-np.dot(w, x)))

    g = Graph()
    w = g.parameter("w", w0)
    loss = apply_primitive("sigmoid", apply_primitive("sum", w * x))
    analytic = backward(g, loss)["w"]
    numeric = oracles.central_difference(f, w0)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    assert rel.max() < 1e-6


def test_unused_parameter_gets_exact_zero():
    g = Graph()
    a = g.parameter("a", np.ones(3))
    g.parameter("unused", np.ones((2, 2)))
    grads = backward(g, (a * a).sum())
    assert grads["unused"].shape == (2, 2)
    assert not grads["unused"].any()


def test_non_scalar_loss_rejected():
    g = Graph()
    a = g.parameter("a", np.ones(3))
    with pytest.raises(NonScalarLossError):
        backward(g, a * 2.0)


def test_loss_from_another_graph_rejected():
    g1, g2 = Graph(), Graph()
    g1.parameter("a", np.ones(1))
    b = g2.parameter("b", np.ones(1))
    with pytest.raises(UnevaluatedGraphError):
        backward(g1, b.sum())
    with pytest.raises(UnevaluatedGraphError):
        backward(g1, 99)


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(5)
    g = Graph()
    a = g.parameter("a", rng.normal(size=(3, 4)))
    b = g.parameter("b", rng.normal(size=(4, 2)))
    l1 = apply_primitive("sigmoid", a @ b).sum()
    l2 = (apply_primitive("softmax", a) * a).mean()
    both = l1 + l2
    g1, g2, g12 = backward(g, l1), backward(g, l2), backward(g, both)
    for k in ("a", "b"):
        np.testing.assert_allclose(g12[k], g1[k] + g2[k], rtol=1e-12, atol=1e-15)


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(2, 7, 5, 3)), rng.normal(size=(3, 3, 3, 4))

    def run():
        with Graph():
            y = apply_primitive("conv2d", x, w, strides=(2, 2))
            return apply_primitive("maxpool2d", y, window=(2, 1), strides=(2, 1)).numpy()

    assert run().tobytes() == run().tobytes()


# ---- finite-difference harness ---------------------------------------------


def test_fd_check_quadratic():
    rng = np.random.default_rng(0)
    g = Graph()
    p = g.parameter("p", rng.normal(size=(4, 3)))
    loss = (p * p * 3.0).sum()
    assert finite_difference_check(g, loss, "p", 1e-5) < 1e-6


def test_fd_check_relu_positive_side():
    g = Graph()
    p = g.parameter("p", np.array([0.3, 1.7, 2.5]))
    loss = (apply_primitive("relu", p) * np.array([1.0, -2.0, 0.5])).sum()
    assert finite_difference_check(g, loss, "p", 1e-5) < 1e-6


def test_fd_check_constant_loss_is_exact():
    g = Graph()
    g.parameter("p", np.ones(4))
    loss = g.constant(np.array(3.0)).sum()
    assert finite_difference_check(g, loss, "p", 1e-5) == 0.0


def test_fd_check_rejects_nonpositive_step():
    g = Graph()
    p = g.parameter("p", np.ones(2))
    with pytest.raises(ValueError):
        finite_difference_check(g, p.sum(), "p", 0.0)


@pytest.mark.parametrize("kind", sorted(CASES))
def test_every_primitive_passes_fd_at_100_points(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = max(check_primitive(kind, rng) for _ in range(100))
    assert worst < 1e-4


def test_every_registered_primitive_has_a_gradient_case():
    assert set(PRIMITIVES) == set(CASES)


@pytest.mark.parametrize("kind", sorted(CASES))
def test_shape_rule_predicts_output(kind):
    rng = np.random.default_rng(1)
    inputs, attrs = CASES[kind](rng)
    predicted = infer_shape(kind, *[np.shape(v) for v in inputs], **attrs)
    with Graph():
        assert apply_primitive(kind, *inputs, **attrs).shape == predicted


# ---- Adam ------------------------------------------------------------------


def test_adam_zero_gradient_is_a_fixed_point():
    params = {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}
    state = AdamState.for_params(params, lr=1e-3)
    new, state2 = adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state)
    for k in params:
        np.testing.assert_array_equal(new[k], params[k])
        np.testing.assert_array_equal(state2.m[k], 0.0)
        np.testing.assert_array_equal(state2.v[k], 0.0)
    assert state2.step == 1


def test_adam_first_step_moves_by_lr():
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    params = {"x": np.array([0.0])}
    state = AdamState.for_params(params, lr=1e-4)
    new, _ = adam_step(params, {"x": np.array([1.0])}, state)
    expected = -1e-4 * 1.0 / (1.0 + 1e-8)
    assert new["x"][0] == pytest.approx(expected, rel=1e-12)


def test_adam_descends_on_positive_gradient():
    params = {"x": np.array([1.0])}
    state = AdamState.for_params(params, lr=1e-2)
    p1, state = adam_step(params, {"x": np.array([1.0])}, state)
    p2, state = adam_step(p1, {"x": np.array([1.0])}, state)
    assert p2["x"][0] < p1["x"][0] < params["x"][0]
    assert state.step == 2


def test_adam_shape_mismatch():
    params = {"x": np.zeros(3)}
    state = AdamState.for_params(params)
    with pytest.raises(ShapeError):
        adam_step(params, {"x": np.zeros(2)}, state)


def test_adam_subset_update_leaves_others_untouched():
    params = {"a": np.ones(2), "b": np.ones(2)}
    state = AdamState.for_params({"a": params["a"]}, lr=0.1)
    new, _ = adam_step(params, {"a": np.ones(2)}, state)
    assert new["b"] is params["b"]
    assert (new["a"] < 1).all()


def test_numpy_arrays_on_the_left_defer_to_the_graph():
    g = Graph()
    w = g.parameter("w", np.ones((3, 2)))
    x = np.arange(6.0).reshape(2, 3)
    out = x @ w
    assert out.shape == (2, 2)
    grads = backward(g, out.sum())
    np.testing.assert_array_equal(grads["w"], np.repeat(x.sum(0)[:, None], 2, axis=1))
    assert (np.ones(2) / (w.sum(axis=0))).shape == (2,)
