"""Vectorised layers against the loop oracles in ``oracles.py``."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advseizure import nn
from advseizure.nn import ConvSpec, PoolSpec
from advseizure.tensor import Graph, ShapeError, same_padding

from . import oracles

TOL = 1e-10
INSTANCES = 100


def _rng(i):
    return np.random.default_rng(1000 + i)


@pytest.mark.parametrize(
    "n,k,s,expected",
    [(250, 3, 2, (125, 0, 1)), (125, 2, 2, (63, 0, 1)), (22, 3, 2, (11, 0, 1)), (11, 1, 1, (11, 0, 0)), (7, 3, 1, (7, 1, 1))],
)
def test_same_padding(n, k, s, expected):
    assert same_padding(n, k, s) == expected


def test_conv2d_same_matches_loops_100_instances():
    worst = 0.0
    for i in range(INSTANCES):
        r = _rng(i)
        H, W = r.integers(2, 9, size=2)
        ci, co = r.integers(1, 4, size=2)
        kh, kw = r.integers(1, 4, size=2)
        sh, sw = r.integers(1, 3, size=2)
        x = r.normal(size=(H, W, ci))
        w = r.normal(size=(kh, kw, ci, co))
        b = r.normal(size=co)
        with Graph():
            got = nn.conv2d_same(x, ConvSpec(int(co), (int(kh), int(kw)), (int(sh), int(sw))), w, b).numpy()
        want = oracles.conv2d_same(x, w, b, (sh, sw))
        assert got.shape == want.shape
        worst = max(worst, np.abs(got - want).max())
    assert worst < TOL


def test_maxpool2d_same_matches_loops_100_instances():
    for i in range(INSTANCES):
        r = _rng(i)
        H, W = r.integers(1, 9, size=2)
        kh, kw = r.integers(1, 4, size=2)
        sh, sw = r.integers(1, 3, size=2)
        x = r.normal(size=(H, W, int(r.integers(1, 4))))
        with Graph():
            got = nn.maxpool2d_same(x, PoolSpec((int(kh), int(kw)), (int(sh), int(sw)))).numpy()
        np.testing.assert_array_equal(got, oracles.maxpool_same(x, (kh, kw), (sh, sw)))


def test_maxpool_padding_never_wins():
    x = -np.ones((3, 3, 1)) * 5.0
    with Graph():
        y = nn.maxpool2d_same(x, PoolSpec((2, 2), (2, 2))).numpy()
    assert (y == -5.0).all()


@pytest.mark.parametrize("activation", ["sigmoid", "none"])
def test_dense_affine_matches_loops_100_instances(activation):
    for i in range(INSTANCES):
        r = _rng(i)
        n, m = r.integers(1, 12, size=2)
        x, w, b = r.normal(size=n), r.normal(size=(n, m)), r.normal(size=m)
        with Graph():
            got = nn.dense_affine(x[None], w, b, activation).numpy()[0]
        np.testing.assert_allclose(got, oracles.dense(x, w, b, activation), rtol=0, atol=TOL)


def test_dense_affine_rejects_wrong_width():
    with Graph(), pytest.raises(ShapeError):
        nn.dense_affine(np.ones((2, 3)), np.ones((4, 2)), np.ones(2))


def test_losses_match_loops_100_instances():
    for i in range(INSTANCES):
        r = _rng(i)
        B = int(r.integers(1, 8))
        a, e = r.normal(size=(B, 5, 3)), r.normal(size=(B, 5, 3))
        y = r.integers(0, 2, size=B).astype(float)
        p = r.uniform(0, 1, size=B)
        C = int(r.integers(2, 6))
        logits = r.normal(size=(B, C))
        q = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        oh = np.eye(C)[r.integers(0, C, size=B)]
        with Graph():
            assert abs(nn.mse_loss(a, e).item() - oracles.mse(a, e)) < TOL
            assert abs(nn.binary_cross_entropy(y, p).item() - oracles.bce(y, p)) < TOL
            assert abs(nn.categorical_cross_entropy(oh, q).item() - oracles.cce(oh, q)) < TOL


def test_bce_at_the_clamp_is_finite():
    with Graph():
        loss = nn.binary_cross_entropy(np.array([1.0, 0.0]), np.array([0.0, 1.0])).item()
    assert loss == pytest.approx(-np.log(1e-12), rel=1e-6)


def test_transposed_conv_adjoint_identity():
    worst = 0.0
    for i in range(INSTANCES):
        r = _rng(i)
        H, W = r.integers(2, 10, size=2)
        a, b = r.integers(1, 4, size=2)
        kh, kw = r.integers(1, 4, size=2)
        strides = tuple(int(s) for s in r.integers(1, 3, size=2))
        spec = ConvSpec(int(b), (int(kh), int(kw)), strides)
        w = r.normal(size=(kh, kw, a, b))
        x = r.normal(size=(H, W, a))
        oh, ow = spec.output_hw((int(H), int(W)))
        y = r.normal(size=(oh, ow, b))
        with Graph():
            ax = nn.conv2d_same(x, spec, w, np.zeros(b)).numpy()
            aty = nn.transposed_conv2d(y, (kh, kw), strides, (H, W), w, np.zeros(a)).numpy()
        lhs, rhs = np.sum(ax * y), np.sum(x * aty)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0))
    assert worst < 1e-9


def test_transposed_conv_inconsistent_target_names_both_shapes():
    with Graph(), pytest.raises(ShapeError, match=r"\[9, 9\].*\[3, 3\]"):
        nn.transposed_conv2d(np.ones((3, 3, 1)), (3, 3), (2, 2), (9, 9), np.ones((3, 3, 1, 1)), np.zeros(1))


def test_upsample_nearest_repeats_then_crops():
    x = np.arange(6.0).reshape(3, 2, 1)
    with Graph():
        y = nn.upsample_nearest(x, (2, 1), (5, 2)).numpy()
    assert y.shape == (5, 2, 1)
    np.testing.assert_array_equal(y[:, 0, 0], [0, 0, 2, 2, 4])


def test_flatten_keeps_batch_axis():
    with Graph():
        assert nn.flatten(np.ones((4, 2, 3, 5))).shape == (4, 30)


def test_dropout_eval_is_identity_and_train_is_inverted():
    x = np.ones((200, 50))
    with Graph():
        np.testing.assert_array_equal(nn.dropout_mask(x, 0.8, "eval").numpy(), x)
        y = nn.dropout_mask(x, 0.8, "train", np.random.default_rng(0)).numpy()
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert abs(y.mean() - 1.0) < 0.02


@pytest.mark.parametrize("rate", [0.0, 1.5, -0.1])
def test_dropout_rejects_bad_keep_rate(rate):
    with Graph(), pytest.raises(ValueError):
        nn.dropout_mask(np.ones(3), rate, "train", np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.integers(1, 4), st.integers(1, 3))
def test_same_output_extent_is_ceil(n, k, s):
    out, lo, hi = same_padding(n, k, s)
    assert out == -(-n // s)
    assert lo + hi == max((out - 1) * s + k - n, 0)
    assert hi - lo in (0, 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(row):
    with Graph():
        p = nn.softmax(np.array([row])).numpy()
    assert abs(p.sum() - 1.0) < 1e-12
    assert (p > 0).all()
