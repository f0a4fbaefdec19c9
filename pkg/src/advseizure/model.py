"""The three-branch adversarial decomposition network.

An EEG window ``E`` (``[M, N]``: time steps by channels) is encoded by two
independent convolutional branches into a seizure latent and a patient
latent.  Each latent is decoded back to an ``[M, N]`` component and the two
components are mixed to reconstruct ``E``.  The seizure latent feeds an
attention-weighted binary classifier, the patient latent a softmax classifier
over training subjects.  Training minimises the sum of the reconstruction,
seizure and patient losses plus an L2 penalty.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Literal, Mapping

import numpy as np

from . import nn
from .nn import ConvSpec, PoolSpec
from .tensor import Graph, ShapeError, Tensor, apply_primitive

Mode = Literal["train", "eval"]
Branches = Literal["all", "seizure"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.  Defaults reproduce the full-size network."""

    window: int = 250
    channels: int = 22
    enc_filters: int = 4
    enc_kernel: tuple[int, int] = (3, 3)
    enc_strides: tuple[int, int] = (2, 2)
    enc_pool: tuple[int, int] = (2, 1)
    cls_filters: tuple[int, ...] = (16, 32, 64, 128)
    cls_kernels: tuple[tuple[int, int], ...] = ((3, 3), (3, 3), (2, 2), (2, 2))
    cls_pools: tuple[tuple[int, int], ...] = ((2, 2), (2, 2), (2, 2), (2, 1))
    fc_hidden: int = 300
    w1: float = 0.5
    w2: float = 0.5
    input_scale: float = 1.0
    l2_coef: float = 1e-4

    def __post_init__(self):
        if not (len(self.cls_filters) == len(self.cls_kernels) == len(self.cls_pools)):
            raise ValueError("cls_filters, cls_kernels and cls_pools must have equal length")
        if abs(self.w1 + self.w2 - 1.0) > 1e-12:
            raise ValueError(f"w1 + w2 must equal 1, got {self.w1} + {self.w2}")
        if not 0.0 <= self.w1 <= 1.0:
            raise ValueError(f"w1 must lie in [0, 1], got {self.w1}")
        if self.window <= 0 or self.channels <= 0:
            raise ValueError("window and channels must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        conv = {}
        for k, v in d.items():
            if k in ("enc_kernel", "enc_strides", "enc_pool"):
                v = tuple(v)
            elif k == "cls_filters":
                v = tuple(int(x) for x in v)
            elif k in ("cls_kernels", "cls_pools"):
                v = tuple(tuple(x) for x in v)
            conv[k] = v
        return cls(**conv)

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    # ---- shape arithmetic -------------------------------------------------

    @property
    def enc_conv(self) -> ConvSpec:
        return ConvSpec(self.enc_filters, self.enc_kernel, self.enc_strides)

    @property
    def enc_pool_spec(self) -> PoolSpec:
        return PoolSpec(self.enc_pool, self.enc_pool)

    def encoder_conv_hw(self) -> tuple[int, int]:
        return self.enc_conv.output_hw((self.window, self.channels))

    def latent_shape(self) -> tuple[int, int, int]:
        j, k = self.enc_pool_spec.output_hw(self.encoder_conv_hw())
        return (j, k, self.enc_filters)

    def trunk_shapes(self) -> list[tuple[int, int, int]]:
        """Shapes after each conv+pool stage of a classifier trunk."""
        hw = self.latent_shape()[:2]
        out = []
        for f, k, p in zip(self.cls_filters, self.cls_kernels, self.cls_pools):
            hw = ConvSpec(f, k).output_hw(hw)
            hw = PoolSpec(p, p).output_hw(hw)
            out.append(hw + (f,))
        return out

    def flat_dim(self) -> int:
        h, w, c = self.trunk_shapes()[-1]
        return h * w * c


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def param_shapes(cfg: ModelConfig, num_patients: int) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every trainable tensor, in canonical order.

    Names ending in ``.w`` are weights (L2-penalised); ``.b`` are biases.
    """
    if num_patients < 2:
        raise ValueError(f"need at least 2 patient classes, got {num_patients}")
    kh, kw = cfg.enc_kernel
    H = cfg.enc_filters
    shapes: dict[str, tuple[int, ...]] = {}
    for br in ("s", "p"):
        shapes[f"enc_{br}.w"] = (kh, kw, 1, H)
        shapes[f"enc_{br}.b"] = (H,)
    for br in ("s", "p"):
        # transposed-conv layout: [kh, kw, c_out, c_in]
        shapes[f"dec_{br}.w"] = (kh, kw, 1, H)
        shapes[f"dec_{br}.b"] = (1,)
    shapes["att.w"] = (cfg.window * cfg.channels, cfg.channels)
    shapes["att.b"] = (cfg.channels,)
    for head, width in (("seiz", cfg.channels), ("pat", num_patients)):
        c_in = H
        for i, (f, k) in enumerate(zip(cfg.cls_filters, cfg.cls_kernels), start=1):
            shapes[f"{head}.conv{i}.w"] = (k[0], k[1], c_in, f)
            shapes[f"{head}.conv{i}.b"] = (f,)
            c_in = f
        shapes[f"{head}.fc1.w"] = (cfg.flat_dim(), cfg.fc_hidden)
        shapes[f"{head}.fc1.b"] = (cfg.fc_hidden,)
        shapes[f"{head}.fc2.w"] = (cfg.fc_hidden, width)
        shapes[f"{head}.fc2.b"] = (width,)
    shapes["seiz.out.b"] = (1,)
    return shapes


SEIZURE_PATH_PREFIXES = ("enc_s.", "att.", "seiz.")


def is_weight(name: str) -> bool:
    return name.endswith(".w")


def on_seizure_path(name: str) -> bool:
    """Whether the seizure loss depends on this parameter."""
    return name.startswith(SEIZURE_PATH_PREFIXES)


@dataclass
class ModelParameters:
    num_patients: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.num_patients, {k: v.copy() for k, v in self.arrays.items()})

    def check(self, cfg: ModelConfig) -> None:
        expected = param_shapes(cfg, self.num_patients)
        if list(expected) != list(self.arrays):
            raise ShapeError("parameter names do not match the model configuration")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")


def glorot_limit(shape: tuple[int, ...]) -> float:
    if len(shape) == 4:
        rf = shape[0] * shape[1]
        fan_in, fan_out = rf * shape[2], rf * shape[3]
    else:
        fan_in, fan_out = shape[0], shape[1]
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(cfg: ModelConfig, num_patients: int, seed: int) -> ModelParameters:
    """Glorot-uniform weights and zero biases, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg, num_patients).items():
        if is_weight(name):
            lim = glorot_limit(shape)
            arrays[name] = rng.uniform(-lim, lim, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParameters(num_patients, arrays)


# --------------------------------------------------------------------------
# forward pieces
# --------------------------------------------------------------------------


def _as_input(E, cfg: ModelConfig):
    """[B, M, N] (or [M, N]) raw window -> [B, M, N, 1] scaled tensor input."""
    shape = E.shape
    if len(shape) == 2:
        shape = (1,) + tuple(shape)
    if tuple(shape[1:]) != (cfg.window, cfg.channels):
        raise ShapeError(
            f"expected windows of shape [{cfg.window}, {cfg.channels}], got {list(shape[1:])}"
        )
    x = apply_primitive("reshape", E, shape=tuple(shape) + (1,))
    if cfg.input_scale != 1.0:
        x = apply_primitive("mul", x, cfg.input_scale)
    return x


def _encode_branch(x, p, br, cfg: ModelConfig):
    h = nn.relu(nn.conv2d_same(x, cfg.enc_conv, p[f"enc_{br}.w"], p[f"enc_{br}.b"]))
    return nn.maxpool2d_same(h, cfg.enc_pool_spec)


def encode(x, p: Mapping[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Seizure and patient latents ``[B, J, K, H]`` from input ``[B, M, N, 1]``."""
    return _encode_branch(x, p, "s", cfg), _encode_branch(x, p, "p", cfg)


def _decode_branch(latent, p, br, cfg: ModelConfig):
    up = nn.upsample_nearest(latent, cfg.enc_pool, cfg.encoder_conv_hw())
    y = nn.transposed_conv2d(
        up, cfg.enc_kernel, cfg.enc_strides, (cfg.window, cfg.channels),
        p[f"dec_{br}.w"], p[f"dec_{br}.b"],
    )  # fmt: skip
    y = nn.relu(y)
    return apply_primitive("reshape", y, shape=(y.shape[0], cfg.window, cfg.channels))


def decode(s_latent, p_latent, p: Mapping[str, Tensor], cfg: ModelConfig):
    """Seizure and patient components ``[B, M, N]`` (non-negative)."""
    return _decode_branch(s_latent, p, "s", cfg), _decode_branch(p_latent, p, "p", cfg)


def reconstruct_and_loss(E, S, P, w1: float = 0.5, w2: float = 0.5):
    """``E' = w1 S + w2 P`` and the mean squared reconstruction error."""
    recon = apply_primitive("add", apply_primitive("mul", S, w1), apply_primitive("mul", P, w2))
    return recon, nn.mse_loss(E, recon)


def attention_weights(x, p: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Per-channel attention in (0, 1): one dense layer over the flattened window."""
    return nn.dense_affine(nn.flatten(x), p["att.w"], p["att.b"], "sigmoid")


def _trunk(latent, p, head, cfg: ModelConfig, mode: Mode, keep_rate: float, rng, trace=None):
    h = latent
    for i, (f, k, pool) in enumerate(
        zip(cfg.cls_filters, cfg.cls_kernels, cfg.cls_pools), start=1
    ):
        h = nn.relu(nn.conv2d_same(h, ConvSpec(f, k), p[f"{head}.conv{i}.w"], p[f"{head}.conv{i}.b"]))
        h = nn.maxpool2d_same(h, PoolSpec(pool, pool))
        if trace is not None:
            trace.append(h.shape[1:])
    flat = nn.flatten(h)
    if trace is not None:
        trace.append(flat.shape[1:])
    flat = nn.dropout_mask(flat, keep_rate, mode, rng)
    hidden = nn.dense_affine(flat, p[f"{head}.fc1.w"], p[f"{head}.fc1.b"], "sigmoid")
    if trace is not None:
        trace.append(hidden.shape[1:])
    return hidden


def seizure_predict(s_latent, att, p, cfg: ModelConfig, mode: Mode = "eval",
                    keep_rate: float = 0.8, rng=None, trace=None):
    """Logit and probability of seizure for each window of the batch.

    The last hidden layer (width N, sigmoid) is dotted with the attention
    vector; an output bias shifts the result before the final sigmoid.
    """
    hidden = _trunk(s_latent, p, "seiz", cfg, mode, keep_rate, rng, trace)
    feat = nn.dense_affine(hidden, p["seiz.fc2.w"], p["seiz.fc2.b"], "sigmoid")
    if trace is not None:
        trace.append(feat.shape[1:])
    logit = apply_primitive("sum", apply_primitive("mul", feat, att), axis=-1)
    logit = apply_primitive("add", logit, p["seiz.out.b"])
    return logit, nn.sigmoid(logit)


def patient_predict(p_latent, p, cfg: ModelConfig, mode: Mode = "eval",
                    keep_rate: float = 0.8, rng=None) -> Tensor:
    """Softmax distribution over the training subjects, ``[B, C]``."""
    hidden = _trunk(p_latent, p, "pat", cfg, mode, keep_rate, rng)
    return nn.softmax(nn.dense_affine(hidden, p["pat.fc2.w"], p["pat.fc2.b"], "none"))


def seizure_loss(labels, prob) -> Tensor:
    return nn.binary_cross_entropy(labels, prob)


def patient_loss(onehot, probs) -> Tensor:
    return nn.categorical_cross_entropy(onehot, probs)


def l2_penalty(p: Mapping[str, Tensor], coef: float = 1e-4) -> Tensor | float:
    """``coef`` times the summed squares of every weight tensor (biases excluded)."""
    terms = [apply_primitive("sum", apply_primitive("mul", t, t)) for n, t in p.items() if is_weight(n)]
    if not terms:
        return 0.0
    total = terms[0]
    for t in terms[1:]:
        total = apply_primitive("add", total, t)
    return apply_primitive("mul", total, coef)


@dataclass(frozen=True)
class LossBundle:
    recon: float
    seizure: float
    patient: float
    l2: float
    total: float


@dataclass
class ForwardPass:
    """Every intermediate tensor of one forward pass, all on ``graph``."""

    graph: Graph
    params: dict[str, Tensor]
    s_latent: Tensor
    attention: Tensor
    logit: Tensor
    prob: Tensor
    p_latent: Tensor | None = None
    S: Tensor | None = None
    P: Tensor | None = None
    recon: Tensor | None = None
    patient_probs: Tensor | None = None
    loss_recon: Tensor | None = None
    loss_seizure: Tensor | None = None
    loss_patient: Tensor | None = None
    loss_l2: Tensor | None = None
    loss_total: Tensor | None = None
    trunk_trace: list = field(default_factory=list)

    def bundle(self) -> LossBundle:
        vals = [self.loss_recon, self.loss_seizure, self.loss_patient, self.loss_l2]
        rd, ls, lp, l2 = (v.item() if isinstance(v, Tensor) else float(v or 0.0) for v in vals)
        # summed in the same order as the graph so total matches bit for bit
        return LossBundle(rd, ls, lp, l2, self.loss_total.item() if self.loss_total is not None else rd + ls + lp + l2)


def onehot(indices, num_classes: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError(f"class index out of range for {num_classes} classes")
    out = np.zeros(idx.shape + (num_classes,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def forward(
    params: ModelParameters,
    E: np.ndarray,
    cfg: ModelConfig,
    *,
    seizure_labels=None,
    patient_labels=None,
    mode: Mode = "eval",
    keep_rate: float = 0.8,
    rng: np.random.Generator | None = None,
    branches: Branches = "all",
) -> ForwardPass:
    """Build the graph for a batch ``E`` of shape ``[B, M, N]``.

    With ``branches="seizure"`` only the seizure encoder, attention and
    seizure classifier are bound and the loss is the seizure loss alone.
    Losses are computed when the corresponding labels are supplied;
    ``patient_labels`` are class indices in ``0..C-1``.
    """
    E = np.asarray(E, dtype=np.float64)
    if E.ndim == 2:
        E = E[None]
    g = Graph()
    names = params.names() if branches == "all" else [n for n in params.names() if on_seizure_path(n)]
    p = {n: g.parameter(n, params[n]) for n in names}

    x = _as_input(g.constant(E), cfg)
    trace: list = []
    s_lat = _encode_branch(x, p, "s", cfg)
    att = attention_weights(x, p, cfg)
    logit, prob = seizure_predict(s_lat, att, p, cfg, mode, keep_rate, rng, trace)
    fp = ForwardPass(g, p, s_lat, att, logit, prob, trunk_trace=trace)

    if seizure_labels is not None:
        fp.loss_seizure = seizure_loss(np.asarray(seizure_labels, dtype=np.float64), prob)
    if branches == "seizure":
        fp.loss_total = fp.loss_seizure
        return fp

    fp.p_latent = _encode_branch(x, p, "p", cfg)
    fp.S, fp.P = decode(fp.s_latent, fp.p_latent, p, cfg)
    target = x.reshape(E.shape)
    fp.recon, fp.loss_recon = reconstruct_and_loss(target, fp.S, fp.P, cfg.w1, cfg.w2)
    fp.patient_probs = patient_predict(fp.p_latent, p, cfg, mode, keep_rate, rng)
    if patient_labels is not None:
        fp.loss_patient = patient_loss(onehot(patient_labels, params.num_patients), fp.patient_probs)
    fp.loss_l2 = l2_penalty(p, cfg.l2_coef)
    if fp.loss_seizure is not None and fp.loss_patient is not None:
        total = apply_primitive("add", fp.loss_recon, fp.loss_seizure)
        total = apply_primitive("add", total, fp.loss_patient)
        fp.loss_total = apply_primitive("add", total, fp.loss_l2)
    return fp


def predict_proba(params: ModelParameters, E: np.ndarray, cfg: ModelConfig, batch: int = 256):
    """Eval-mode seizure probabilities and attention vectors for windows ``E``."""
    probs, atts = [], []
    for i in range(0, len(E), batch):
        fp = forward(params, E[i : i + batch], cfg, mode="eval", branches="seizure")
        probs.append(fp.prob.numpy())
        atts.append(fp.attention.numpy())
    if not probs:
        return np.zeros(0), np.zeros((0, cfg.channels))
    return np.concatenate(probs), np.concatenate(atts)


# --------------------------------------------------------------------------
# checkpoint container
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ADVSZCKP"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParameters, path: str | Path) -> None:
    """Write parameters as: magic, u32 version, u32 C, u32 record count, then per
    record u16 name length, UTF-8 name, u8 rank, u32 dims, float64 LE data."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<III", CHECKPOINT_VERSION, params.num_patients, len(params.arrays)))
    for name, arr in params.arrays.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> ModelParameters:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, C, count = struct.unpack("<III", take(12))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    arrays = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        name = bytes(take(n)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return ModelParameters(C, arrays)


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
