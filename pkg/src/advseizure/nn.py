"""Neural-network building blocks on top of :mod:`advseizure.tensor`.

Spatial ops use NHWC layout.  Each accepts either a batch ``[B, H, W, C]``
or a single sample ``[H, W, C]`` and returns the matching rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tensor import ShapeError, Tensor, apply_primitive, same_padding

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: tuple[int, int]
    strides: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.filters <= 0:
            raise ShapeError(f"filter count must be positive, got {self.filters}")
        if min(self.kernel) <= 0 or min(self.strides) <= 0:
            raise ShapeError(f"kernel {self.kernel} and strides {self.strides} must be positive")

    def output_hw(self, hw: tuple[int, int]) -> tuple[int, int]:
        return tuple(same_padding(n, k, s)[0] for n, k, s in zip(hw, self.kernel, self.strides))


@dataclass(frozen=True)
class PoolSpec:
    window: tuple[int, int]
    strides: tuple[int, int]

    def __post_init__(self):
        if min(self.window) <= 0 or min(self.strides) <= 0:
            raise ShapeError(f"window {self.window} and strides {self.strides} must be positive")

    def output_hw(self, hw: tuple[int, int]) -> tuple[int, int]:
        return tuple(same_padding(n, k, s)[0] for n, k, s in zip(hw, self.window, self.strides))


def _shape(x) -> tuple[int, ...]:
    return x.shape if isinstance(x, Tensor) else np.shape(x)


def _as_batch(x):
    """Promote a 3-d sample to a batch of one; returns (x4, was_single)."""
    nd = len(_shape(x))
    if nd == 3:
        return apply_primitive("reshape", x, shape=(1,) + tuple(_shape(x))), True
    if nd == 4:
        return x, False
    raise ShapeError(f"expected [H, W, C] or [B, H, W, C], got shape {_shape(x)}")


def _unbatch(y, single):
    return apply_primitive("reshape", y, shape=tuple(_shape(y)[1:])) if single else y


def conv2d_same(x, spec: ConvSpec, weights, bias) -> Tensor:
    """SAME-padded cross-correlation plus per-filter bias.

    ``weights`` is ``[kh, kw, c_in, c_out]`` and ``bias`` is ``[c_out]``.
    """
    ws = _shape(weights)
    if tuple(ws[:2]) != tuple(spec.kernel) or ws[3] != spec.filters:
        raise ShapeError(
            f"conv2d_same: weights {ws} inconsistent with kernel {spec.kernel} "
            f"and {spec.filters} filters"
        )
    x4, single = _as_batch(x)
    y = apply_primitive("conv2d", x4, weights, strides=spec.strides)
    y = apply_primitive("add", y, bias)
    return _unbatch(y, single)


def transposed_conv2d(x, kernel, strides, target_hw, weights, bias) -> Tensor:
    """Transposed SAME convolution onto an explicit output extent.

    Computed as the input-gradient of :func:`conv2d_same`, so ``weights`` use
    the layout of the forward convolution it undoes: ``[kh, kw, c_out, c_in]``.
    Raises :class:`ShapeError` when ``target_hw`` does not map back onto the
    input extent under SAME arithmetic.
    """
    ws = _shape(weights)
    if tuple(ws[:2]) != tuple(kernel):
        raise ShapeError(f"transposed_conv2d: weights {ws} do not match kernel {tuple(kernel)}")
    x4, single = _as_batch(x)
    y = apply_primitive(
        "conv2d_transpose", x4, weights, strides=tuple(strides), out_hw=tuple(target_hw)
    )
    y = apply_primitive("add", y, bias)
    return _unbatch(y, single)


def maxpool2d_same(x, spec: PoolSpec) -> Tensor:
    x4, single = _as_batch(x)
    y = apply_primitive("maxpool2d", x4, window=spec.window, strides=spec.strides)
    return _unbatch(y, single)


def upsample_nearest(x, factors, target_hw) -> Tensor:
    """Repeat rows/columns ``factors`` times, then crop to ``target_hw``."""
    x4, single = _as_batch(x)
    y = apply_primitive("upsample", x4, factors=tuple(factors), out_hw=tuple(target_hw))
    return _unbatch(y, single)


def relu(x) -> Tensor:
    return apply_primitive("relu", x)


def sigmoid(x) -> Tensor:
    return apply_primitive("sigmoid", x)


def softmax(x, axis: int = -1) -> Tensor:
    return apply_primitive("softmax", x, axis=axis)


def flatten(x) -> Tensor:
    """Collapse every axis but the leading batch axis."""
    s = _shape(x)
    return apply_primitive("reshape", x, shape=(s[0], -1))


def dense_affine(x, weights, bias, activation: Literal["sigmoid", "none"] = "none") -> Tensor:
    xs, ws = _shape(x), _shape(weights)
    if len(ws) != 2 or xs[-1] != ws[0] or tuple(_shape(bias)) != (ws[1],):
        raise ShapeError(
            f"dense_affine: input {xs}, weights {ws} and bias {_shape(bias)} disagree"
        )
    y = apply_primitive("add", apply_primitive("matmul", x, weights), bias)
    if activation == "sigmoid":
        return sigmoid(y)
    if activation == "none":
        return y
    raise ValueError(f"unknown activation {activation!r}")


def dropout_mask(
    x,
    keep_rate: float,
    mode: Literal["train", "eval"],
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Inverted dropout: scale kept units by ``1/keep_rate`` during training."""
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep rate must lie in (0, 1], got {keep_rate}")
    if mode == "eval" or keep_rate == 1.0:
        return x if isinstance(x, Tensor) else apply_primitive("reshape", x, shape=np.shape(x))
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs a seeded generator")
    mask = (rng.random(_shape(x)) < keep_rate) / keep_rate
    return apply_primitive("mul", x, mask)


# --------------------------------------------------------------------------
# losses (batch means)
# --------------------------------------------------------------------------


def mse_loss(target, estimate) -> Tensor:
    """Mean of squared differences over every entry."""
    if tuple(_shape(target)) != tuple(_shape(estimate)):
        raise ShapeError(f"mse_loss: shapes {_shape(target)} and {_shape(estimate)} differ")
    d = apply_primitive("sub", target, estimate)
    return apply_primitive("mean", apply_primitive("mul", d, d))


def _clamped_log(p) -> Tensor:
    return apply_primitive("log", apply_primitive("clip", p, lo=LOG_CLAMP, hi=1.0 - LOG_CLAMP))


def binary_cross_entropy(labels, probs) -> Tensor:
    """``-mean(y log p + (1-y) log(1-p))`` with probabilities clamped away from 0 and 1."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != tuple(_shape(probs)):
        raise ShapeError(f"binary_cross_entropy: labels {labels.shape} vs probs {_shape(probs)}")
    pos = apply_primitive("mul", labels, _clamped_log(probs))
    neg = apply_primitive("mul", 1.0 - labels, _clamped_log(apply_primitive("sub", 1.0, probs)))
    return apply_primitive("neg", apply_primitive("mean", apply_primitive("add", pos, neg)))


def categorical_cross_entropy(onehot, probs) -> Tensor:
    """``-mean_b sum_c y[b, c] log p[b, c]`` with clamped logs."""
    onehot = np.asarray(onehot, dtype=np.float64)
    ps = tuple(_shape(probs))
    if onehot.shape != ps:
        raise ShapeError(f"categorical_cross_entropy: labels {onehot.shape} vs probs {ps}")
    per = apply_primitive("sum", apply_primitive("mul", onehot, _clamped_log(probs)), axis=-1)
    return apply_primitive("neg", apply_primitive("mean", per))
