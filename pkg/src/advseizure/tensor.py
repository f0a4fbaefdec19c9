"""Dense tensors and a reverse-mode automatic-differentiation engine.

Every forward computation is recorded on a :class:`Graph` as it runs
(dynamic-graph semantics).  A :class:`Tensor` is a read-only handle to one
node of that graph.  Nodes are appended in execution order, so the node list
is already topologically sorted and :func:`backward` only has to walk it in
reverse.

Primitives are registered in :data:`PRIMITIVES`; each one provides a shape
rule (no numeric work), a forward kernel and a vector-Jacobian product.  All
arithmetic is float64.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Graph",
    "Tensor",
    "Primitive",
    "PRIMITIVES",
    "ShapeError",
    "UnknownPrimitiveError",
    "NumericFault",
    "NonScalarLossError",
    "UnevaluatedGraphError",
    "apply_primitive",
    "infer_shape",
    "backward",
    "finite_difference_check",
    "same_padding",
]


class ShapeError(ValueError):
    """Input shapes are invalid for a primitive."""


class UnknownPrimitiveError(KeyError):
    """The requested primitive kind is not registered."""


class NumericFault(FloatingPointError):
    """A forward value became NaN or infinite."""


class NonScalarLossError(ValueError):
    pass


class UnevaluatedGraphError(RuntimeError):
    """The loss node does not belong to (or was never evaluated on) the graph."""


# --------------------------------------------------------------------------
# graph and tensor handles
# --------------------------------------------------------------------------

_ACTIVE: contextvars.ContextVar["Graph | None"] = contextvars.ContextVar(
    "advseizure_active_graph", default=None
)


@dataclass(eq=False)
class Node:
    kind: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any]
    shape: tuple[int, ...]
    value: np.ndarray
    ctx: Any = None
    name: str | None = None
    trainable: bool = False


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class Graph:
    """Ordered record of primitive applications.

    Use as a context manager to make it the active graph for
    :func:`apply_primitive` calls whose inputs are all plain arrays.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "Graph":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> "Tensor":
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1)

    def constant(self, value) -> "Tensor":
        arr = _freeze(np.array(value, dtype=np.float64))
        _check_finite(arr, "constant")
        return self._append(Node("constant", (), {}, arr.shape, arr))

    def parameter(self, name: str, value) -> "Tensor":
        """Add a trainable leaf.  Names are unique within a graph."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} already defined on this graph")
        arr = _freeze(np.array(value, dtype=np.float64))
        _check_finite(arr, f"parameter {name}")
        t = self._append(Node("parameter", (), {}, arr.shape, arr, name=name, trainable=True))
        self.params[name] = t.id
        return t

    def parameter_ids(self) -> list[int]:
        return list(self.params.values())

    def replay(self, overrides: Mapping[str, np.ndarray] | None = None) -> list[np.ndarray]:
        """Re-run every node forward, substituting parameter values by name.

        The graph itself is left untouched; the recomputed values are returned
        in node order.
        """
        overrides = overrides or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind in ("constant", "parameter"):
                if node.name is not None and node.name in overrides:
                    v = np.asarray(overrides[node.name], dtype=np.float64)
                    if v.shape != node.shape:
                        raise ShapeError(
                            f"override for {node.name!r} has shape {v.shape}, expected {node.shape}"
                        )
                    values.append(v)
                else:
                    values.append(node.value)
                continue
            prim = PRIMITIVES[node.kind]
            out, _ = prim.forward([values[i] for i in node.inputs], node.attrs)
            _check_finite(out, node.kind)
            values.append(out)
        return values


class Tensor:
    """Immutable handle to a graph node."""

    __slots__ = ("graph", "id")
    # make numpy defer to the reflected operators below (array @ tensor etc.)
    __array_ufunc__ = None

    def __init__(self, graph: Graph, node_id: int) -> None:
        self.graph = graph
        self.id = node_id

    @property
    def node(self) -> Node:
        return self.graph.nodes[self.id]

    @property
    def data(self) -> np.ndarray:
        return self.node.value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node.shape

    @property
    def ndim(self) -> int:
        return len(self.node.shape)

    def numpy(self) -> np.ndarray:
        return self.node.value.copy()

    def item(self) -> float:
        return float(self.node.value.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(kind={self.node.kind}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return apply_primitive("add", self, other)

    def __radd__(self, other):
        return apply_primitive("add", other, self)

    def __sub__(self, other):
        return apply_primitive("sub", self, other)

    def __rsub__(self, other):
        return apply_primitive("sub", other, self)

    def __mul__(self, other):
        return apply_primitive("mul", self, other)

    def __rmul__(self, other):
        return apply_primitive("mul", other, self)

    def __neg__(self):
        return apply_primitive("neg", self)

    def __truediv__(self, other):
        return apply_primitive("div", self, other)

    def __rtruediv__(self, other):
        return apply_primitive("div", other, self)

    def __matmul__(self, other):
        return apply_primitive("matmul", self, other)

    def __rmatmul__(self, other):
        return apply_primitive("matmul", other, self)

    def sum(self, axis=None, keepdims=False):
        return apply_primitive("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_primitive("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", self, shape=tuple(shape))


# --------------------------------------------------------------------------
# primitive registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int
    infer: Callable[..., tuple[int, ...]]
    forward: Callable[[list[np.ndarray], dict], tuple[np.ndarray, Any]]
    vjp: Callable[..., tuple[np.ndarray | None, ...]]
    attrs: tuple[str, ...] = field(default_factory=tuple)


PRIMITIVES: dict[str, Primitive] = {}


def _register(name, arity, infer, forward, vjp, attrs=()):
    PRIMITIVES[name] = Primitive(name, arity, infer, forward, vjp, tuple(attrs))


def _check_finite(a: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericFault(f"non-finite value produced by {where}")


def infer_shape(kind: str, *shapes: Sequence[int], **attrs) -> tuple[int, ...]:
    """Output shape of ``kind`` for the given input shapes, without computing."""
    prim = _lookup(kind)
    if len(shapes) != prim.arity:
        raise ShapeError(f"{kind}: expected {prim.arity} inputs, got {len(shapes)}")
    attrs = _complete_attrs(prim, attrs)
    return tuple(int(d) for d in prim.infer(*[tuple(s) for s in shapes], **attrs))


def _lookup(kind: str) -> Primitive:
    try:
        return PRIMITIVES[kind]
    except KeyError:
        raise UnknownPrimitiveError(f"unknown primitive {kind!r}") from None


_DEFAULTS: dict[str, dict[str, Any]] = {
    "sum": {"axis": None, "keepdims": False},
    "mean": {"axis": None, "keepdims": False},
    "softmax": {"axis": -1},
}


def _complete_attrs(prim: Primitive, attrs: dict) -> dict:
    full = dict(_DEFAULTS.get(prim.name, {}))
    full.update(attrs)
    missing = [a for a in prim.attrs if a not in full]
    if missing:
        raise ValueError(f"{prim.name}: missing attributes {missing}")
    unknown = [a for a in full if a not in prim.attrs]
    if unknown:
        raise ValueError(f"{prim.name}: unexpected attributes {unknown}")
    return full


def apply_primitive(kind: str, *inputs, **attrs) -> Tensor:
    """Evaluate primitive ``kind`` on ``inputs`` and record it.

    Plain arrays and scalars among the inputs become constants on the graph
    of the tensor inputs (or on the active graph when there are none).
    """
    prim = _lookup(kind)
    if len(inputs) != prim.arity:
        raise ShapeError(f"{kind}: expected {prim.arity} inputs, got {len(inputs)}")
    attrs = _complete_attrs(prim, attrs)

    graph = None
    for x in inputs:
        if isinstance(x, Tensor):
            if graph is None:
                graph = x.graph
            elif x.graph is not graph:
                raise ValueError(f"{kind}: inputs belong to different graphs")
    if graph is None:
        graph = _ACTIVE.get()
        if graph is None:
            raise RuntimeError(f"{kind}: no tensor inputs and no active graph")
    handles = [x if isinstance(x, Tensor) else graph.constant(x) for x in inputs]

    shape = tuple(prim.infer(*[h.shape for h in handles], **attrs))
    values = [h.data for h in handles]
    out, ctx = prim.forward(values, attrs)
    out = np.asarray(out, dtype=np.float64)
    if out.shape != shape:  # pragma: no cover - guards kernel/shape-rule drift
        raise AssertionError(f"{kind}: kernel produced {out.shape}, shape rule {shape}")
    _check_finite(out, kind)
    return graph._append(
        Node(kind, tuple(h.id for h in handles), attrs, shape, _freeze(out), ctx)
    )


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------


def _reverse_pass(graph: Graph, loss: Tensor | int) -> list[np.ndarray | None]:
    loss_id = loss.id if isinstance(loss, Tensor) else int(loss)
    if isinstance(loss, Tensor) and loss.graph is not graph:
        raise UnevaluatedGraphError("loss tensor was recorded on a different graph")
    if not 0 <= loss_id < len(graph.nodes):
        raise UnevaluatedGraphError(f"node {loss_id} has not been evaluated on this graph")
    loss_node = graph.nodes[loss_id]
    if loss_node.value.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss_node.shape}")

    grads: list[np.ndarray | None] = [None] * (loss_id + 1)
    grads[loss_id] = np.ones(loss_node.shape)
    for i in range(loss_id, -1, -1):
        g = grads[i]
        node = graph.nodes[i]
        if g is None or not node.inputs:
            continue
        prim = PRIMITIVES[node.kind]
        ins = [graph.nodes[j].value for j in node.inputs]
        in_grads = prim.vjp(g, ins, node.value, node.ctx, node.attrs)
        for j, gj in zip(node.inputs, in_grads):
            if gj is None:
                continue
            if grads[j] is None:
                grads[j] = gj
            else:
                grads[j] = grads[j] + gj
    return grads


def backward(graph: Graph, loss: Tensor | int) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss with respect to every parameter of ``graph``.

    Parameters not on any path to the loss get exact zero arrays.
    """
    grads = _reverse_pass(graph, loss)
    out = {}
    for name, pid in graph.params.items():
        g = grads[pid] if pid < len(grads) else None
        shape = graph.nodes[pid].shape
        out[name] = np.zeros(shape) if g is None else np.asarray(g, dtype=np.float64).reshape(shape)
    return out


def finite_difference_check(
    graph: Graph,
    loss: Tensor | int,
    param: str,
    h: float = 1e-5,
    entries: Iterable[int] | None = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``entries`` restricts the check to a subset of flat indices of the
    parameter (all of them by default).  The error for each entry is
    ``|a - n| / max(|a|, |n|, 1e-12)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    loss_id = loss.id if isinstance(loss, Tensor) else int(loss)
    analytic = backward(graph, loss_id)[param].reshape(-1)
    base = graph.nodes[graph.params[param]].value
    flat = base.reshape(-1)
    idx = range(flat.size) if entries is None else entries

    worst = 0.0
    for k in idx:
        plus = flat.copy()
        plus[k] += h
        minus = flat.copy()
        minus[k] -= h
        fp = graph.replay({param: plus.reshape(base.shape)})[loss_id].item()
        fm = graph.replay({param: minus.reshape(base.shape)})[loss_id].item()
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[k]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        if not np.isfinite(err):
            raise NumericFault(f"gradient check for {param}[{k}] is not finite")
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _broadcast_shape(a, b, kind):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a} and {b}") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(output extent, pad before, pad after) for SAME padding along one axis.

    The odd pad element goes on the high side.
    """
    if stride <= 0 or kernel <= 0:
        raise ShapeError(f"kernel and stride must be positive, got {kernel}, {stride}")
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _pair(v, what):
    v = tuple(int(x) for x in v)
    if len(v) != 2:
        raise ShapeError(f"{what} must have two entries, got {v}")
    return v


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def _binary(kind, fn, vjp_fn):
    _register(
        kind,
        2,
        lambda a, b: _broadcast_shape(a, b, kind),
        lambda v, at: (fn(v[0], v[1]), None),
        lambda g, v, out, ctx, at: tuple(
            _unbroadcast(gi, x.shape) for gi, x in zip(vjp_fn(g, v[0], v[1]), v)
        ),
    )


_binary("add", np.add, lambda g, a, b: (g, g))
_binary("sub", np.subtract, lambda g, a, b: (g, -g))
_binary("mul", np.multiply, lambda g, a, b: (g * b, g * a))
_binary("div", np.divide, lambda g, a, b: (g / b, -g * a / (b * b)))


def _unary(kind, fn, vjp_fn, attrs=()):
    _register(
        kind,
        1,
        lambda a, **at: a,
        lambda v, at: fn(v[0], **at),
        lambda g, v, out, ctx, at: (vjp_fn(g, v[0], out, ctx, **at),),
        attrs,
    )


_unary("neg", lambda x: (-x, None), lambda g, x, y, c: -g)
_unary("relu", lambda x: (np.maximum(x, 0.0), None), lambda g, x, y, c: g * (x > 0))
_unary("sigmoid", lambda x: (expit(x), None), lambda g, x, y, c: g * y * (1.0 - y))
_unary("exp", lambda x: (np.exp(x), None), lambda g, x, y, c: g * y)


def _log_forward(x):
    if np.any(x <= 0):
        raise NumericFault("log of a non-positive value")
    return np.log(x), None


_unary("log", _log_forward, lambda g, x, y, c: g / x)
_unary(
    "clip",
    lambda x, lo, hi: (np.clip(x, lo, hi), None),
    lambda g, x, y, c, lo, hi: g * ((x >= lo) & (x <= hi)),
    attrs=("lo", "hi"),
)


def _softmax_infer(a, axis):
    if not a:
        raise ShapeError("softmax: needs at least one axis")
    if not -len(a) <= axis < len(a):
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a}")
    return a


def _softmax_forward(v, at):
    x = v[0]
    z = np.exp(x - x.max(axis=at["axis"], keepdims=True))
    return z / z.sum(axis=at["axis"], keepdims=True), None


def _softmax_vjp(g, v, y, ctx, at):
    return (y * (g - (g * y).sum(axis=at["axis"], keepdims=True)),)


_register("softmax", 1, _softmax_infer, _softmax_forward, _softmax_vjp, ("axis",))


# --------------------------------------------------------------------------
# reductions and reshapes
# --------------------------------------------------------------------------


def _norm_axes(axis, ndim, kind):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"{kind}: axis {ax} out of range for {ndim}-d input")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def _reduce_infer(kind):
    def infer(a, axis, keepdims):
        axes = _norm_axes(axis, len(a), kind)
        if keepdims:
            return tuple(1 if i in axes else d for i, d in enumerate(a))
        return tuple(d for i, d in enumerate(a) if i not in axes)

    return infer


def _reduce_vjp(scale):
    def vjp(g, v, out, ctx, at):
        x = v[0]
        axes = _norm_axes(at["axis"], x.ndim, "reduce")
        if not at["keepdims"]:
            g = np.expand_dims(g, axes)
        n = 1
        for ax in axes:
            n *= x.shape[ax]
        return (np.broadcast_to(g / n if scale else g, x.shape).copy(),)

    return vjp


_register(
    "sum",
    1,
    _reduce_infer("sum"),
    lambda v, at: (
        np.sum(v[0], axis=_norm_axes(at["axis"], v[0].ndim, "sum"), keepdims=at["keepdims"]),
        None,
    ),
    _reduce_vjp(False),
    ("axis", "keepdims"),
)
_register(
    "mean",
    1,
    _reduce_infer("mean"),
    lambda v, at: (
        np.mean(v[0], axis=_norm_axes(at["axis"], v[0].ndim, "mean"), keepdims=at["keepdims"]),
        None,
    ),
    _reduce_vjp(True),
    ("axis", "keepdims"),
)


def _reshape_infer(a, shape):
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(a, dtype=np.int64))
    if shape.count(-1) > 1:
        raise ShapeError("reshape: at most one -1 allowed")
    if -1 in shape:
        rest = int(np.prod([s for s in shape if s != -1], dtype=np.int64))
        if rest == 0 or n % rest:
            raise ShapeError(f"reshape: cannot reshape {a} into {shape}")
        shape = tuple(n // rest if s == -1 else s for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != n:
        raise ShapeError(f"reshape: cannot reshape {a} into {shape}")
    return shape


_register(
    "reshape",
    1,
    _reshape_infer,
    lambda v, at: (v[0].reshape(_reshape_infer(v[0].shape, at["shape"])), None),
    lambda g, v, out, ctx, at: (g.reshape(v[0].shape),),
    ("shape",),
)


# --------------------------------------------------------------------------
# matrix product: a[..., n] @ b[n, m]
# --------------------------------------------------------------------------


def _matmul_infer(a, b):
    if len(b) != 2 or len(a) < 1:
        raise ShapeError(f"matmul: expected a[..., n] @ b[n, m], got {a} and {b}")
    if a[-1] != b[0]:
        raise ShapeError(f"matmul: inner dimensions differ ({a[-1]} vs {b[0]}) for {a} @ {b}")
    return a[:-1] + (b[1],)


def _matmul_vjp(g, v, out, ctx, at):
    a, b = v
    ga = g @ b.T
    gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
    return ga, gb


_register("matmul", 2, _matmul_infer, lambda v, at: (v[0] @ v[1], None), _matmul_vjp)


# --------------------------------------------------------------------------
# convolution family (NHWC, cross-correlation, SAME padding)
# --------------------------------------------------------------------------


def _conv_geometry(hw, kernel, strides):
    (oh, ph0, ph1) = same_padding(hw[0], kernel[0], strides[0])
    (ow, pw0, pw1) = same_padding(hw[1], kernel[1], strides[1])
    return (oh, ow), ((ph0, ph1), (pw0, pw1))


def _taps(kernel, strides, out_hw):
    kh, kw = kernel
    sh, sw = strides
    oh, ow = out_hw
    for i in range(kh):
        for j in range(kw):
            yield i, j, (slice(i, i + sh * (oh - 1) + 1, sh), slice(j, j + sw * (ow - 1) + 1, sw))


def conv_forward(x, w, strides):
    """SAME cross-correlation of x [B,H,W,Ci] with w [kh,kw,Ci,Co]."""
    kernel = w.shape[:2]
    out_hw, pads = _conv_geometry(x.shape[1:3], kernel, strides)
    xp = np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)))
    y = np.zeros((x.shape[0],) + out_hw + (w.shape[3],))
    for i, j, (si, sj) in _taps(kernel, strides, out_hw):
        y += xp[:, si, sj, :] @ w[i, j]
    return y


def conv_input_grad(gy, w, in_hw, strides):
    """Adjoint of :func:`conv_forward` with respect to its input."""
    kernel = w.shape[:2]
    out_hw, pads = _conv_geometry(in_hw, kernel, strides)
    H, W = in_hw
    gxp = np.zeros(
        (gy.shape[0], H + pads[0][0] + pads[0][1], W + pads[1][0] + pads[1][1], w.shape[2])
    )
    for i, j, (si, sj) in _taps(kernel, strides, out_hw):
        gxp[:, si, sj, :] += gy @ w[i, j].T
    return gxp[:, pads[0][0] : pads[0][0] + H, pads[1][0] : pads[1][0] + W, :]


def conv_weight_grad(x, gy, kernel, strides):
    out_hw, pads = _conv_geometry(x.shape[1:3], kernel, strides)
    xp = np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)))
    gw = np.zeros(tuple(kernel) + (x.shape[3], gy.shape[3]))
    for i, j, (si, sj) in _taps(kernel, strides, out_hw):
        gw[i, j] = np.tensordot(xp[:, si, sj, :], gy, axes=([0, 1, 2], [0, 1, 2]))
    return gw


def _conv2d_infer(x, w, strides):
    strides = _pair(strides, "conv2d strides")
    if min(strides) <= 0:
        raise ShapeError(f"conv2d: strides must be positive, got {strides}")
    if len(x) != 4 or len(w) != 4:
        raise ShapeError(f"conv2d: expected x[B,H,W,C] and w[kh,kw,Ci,Co], got {x} and {w}")
    if x[3] != w[2]:
        raise ShapeError(f"conv2d: input has {x[3]} channels but weights expect {w[2]}")
    out_hw, _ = _conv_geometry(x[1:3], w[:2], strides)
    return (x[0],) + out_hw + (w[3],)


def _conv2d_vjp(g, v, out, ctx, at):
    x, w = v
    strides = _pair(at["strides"], "strides")
    return (
        conv_input_grad(g, w, x.shape[1:3], strides),
        conv_weight_grad(x, g, w.shape[:2], strides),
    )


_register(
    "conv2d",
    2,
    _conv2d_infer,
    lambda v, at: (conv_forward(v[0], v[1], _pair(at["strides"], "strides")), None),
    _conv2d_vjp,
    ("strides",),
)


def _tconv_infer(y, w, strides, out_hw):
    strides = _pair(strides, "conv2d_transpose strides")
    out_hw = _pair(out_hw, "conv2d_transpose target shape")
    if min(strides) <= 0:
        raise ShapeError(f"conv2d_transpose: strides must be positive, got {strides}")
    if len(y) != 4 or len(w) != 4:
        raise ShapeError(
            f"conv2d_transpose: expected y[B,h,w,C] and w[kh,kw,Co,Ci], got {y} and {w}"
        )
    if y[3] != w[3]:
        raise ShapeError(f"conv2d_transpose: input has {y[3]} channels but weights expect {w[3]}")
    reach, _ = _conv_geometry(out_hw, w[:2], strides)
    if reach != tuple(y[1:3]):
        raise ShapeError(
            f"conv2d_transpose: target shape {list(out_hw)} is unreachable from input "
            f"{list(y[1:3])} with strides {list(strides)} (SAME maps it to {list(reach)})"
        )
    return (y[0],) + out_hw + (w[2],)


def _tconv_vjp(g, v, out, ctx, at):
    y, w = v
    strides = _pair(at["strides"], "strides")
    return conv_forward(g, w, strides), conv_weight_grad(g, y, w.shape[:2], strides)


_register(
    "conv2d_transpose",
    2,
    _tconv_infer,
    lambda v, at: (
        conv_input_grad(v[0], v[1], _pair(at["out_hw"], "out_hw"), _pair(at["strides"], "strides")),
        None,
    ),
    _tconv_vjp,
    ("strides", "out_hw"),
)


# --------------------------------------------------------------------------
# max pooling and nearest-neighbour upsampling
# --------------------------------------------------------------------------


def _pool_infer(x, window, strides):
    window = _pair(window, "maxpool2d window")
    strides = _pair(strides, "maxpool2d strides")
    if min(window) <= 0 or min(strides) <= 0:
        raise ShapeError(f"maxpool2d: window {window} and strides {strides} must be positive")
    if len(x) != 4:
        raise ShapeError(f"maxpool2d: expected x[B,H,W,C], got {x}")
    out_hw, _ = _conv_geometry(x[1:3], window, strides)
    return (x[0],) + out_hw + (x[3],)


def _pool_forward(v, at):
    x = v[0]
    window = _pair(at["window"], "window")
    strides = _pair(at["strides"], "strides")
    out_hw, pads = _conv_geometry(x.shape[1:3], window, strides)
    xp = np.pad(x, ((0, 0), pads[0], pads[1], (0, 0)), constant_values=-np.inf)
    stack = np.stack([xp[:, si, sj, :] for _, _, (si, sj) in _taps(window, strides, out_hw)])
    arg = np.argmax(stack, axis=0)  # first index wins ties
    out = np.take_along_axis(stack, arg[None], axis=0)[0]
    return out, arg


def _pool_vjp(g, v, out, arg, at):
    x = v[0]
    window = _pair(at["window"], "window")
    strides = _pair(at["strides"], "strides")
    out_hw, pads = _conv_geometry(x.shape[1:3], window, strides)
    H, W = x.shape[1:3]
    gxp = np.zeros((x.shape[0], H + sum(pads[0]), W + sum(pads[1]), x.shape[3]))
    for k, (_, _, (si, sj)) in enumerate(_taps(window, strides, out_hw)):
        gxp[:, si, sj, :] += np.where(arg == k, g, 0.0)
    return (gxp[:, pads[0][0] : pads[0][0] + H, pads[1][0] : pads[1][0] + W, :],)


_register("maxpool2d", 1, _pool_infer, _pool_forward, _pool_vjp, ("window", "strides"))


def _up_infer(x, factors, out_hw):
    factors = _pair(factors, "upsample factors")
    out_hw = _pair(out_hw, "upsample target")
    if len(x) != 4:
        raise ShapeError(f"upsample: expected x[B,H,W,C], got {x}")
    for n, f, t in zip(x[1:3], factors, out_hw):
        if f <= 0 or not (n - 1) * f < t <= n * f:
            raise ShapeError(
                f"upsample: cannot map extent {n} to {t} by repeating {f} times and cropping"
            )
    return (x[0],) + out_hw + (x[3],)


def _up_forward(v, at):
    fh, fw = _pair(at["factors"], "factors")
    H, W = _pair(at["out_hw"], "out_hw")
    x = np.repeat(np.repeat(v[0], fh, axis=1), fw, axis=2)
    return x[:, :H, :W, :], None


def _up_vjp(g, v, out, ctx, at):
    x = v[0]
    B, h, w, C = x.shape
    fh, fw = _pair(at["factors"], "factors")
    full = np.zeros((B, h * fh, w * fw, C))
    full[:, : g.shape[1], : g.shape[2], :] = g
    return (full.reshape(B, h, fh, w, fw, C).sum(axis=(2, 4)),)


_register("upsample", 1, _up_infer, _up_forward, _up_vjp, ("factors", "out_hw"))
