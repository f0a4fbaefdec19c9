"""Finite-difference verification of every differentiable primitive and of the
end-to-end training loss on a reduced network."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelConfig, forward, init_params, is_weight
from .tensor import Graph, apply_primitive, backward, finite_difference_check

H = 1e-5

# input 16 x 8, one or two filters per layer
REDUCED = ModelConfig(
    window=16,
    channels=8,
    enc_filters=2,
    cls_filters=(2, 1, 2, 2),
    fc_hidden=5,
)


def _away_from_zero(rng, shape, lo=0.2, hi=1.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    """Values whose pairwise gaps are far larger than the difference step."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(-0.01, 0.01, n)).reshape(shape) - n * 0.025


# kind -> (input factory, attributes)
Case = Callable[[np.random.Generator], tuple[list[np.ndarray], dict]]

CASES: dict[str, Case] = {
    "add": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(4,))], {}),
    "sub": lambda r: ([r.normal(size=(3, 4)), r.normal(size=(3, 1))], {}),
    "mul": lambda r: ([r.normal(size=(2, 3)), r.normal(size=(2, 3))], {}),
    "div": lambda r: ([r.normal(size=(2, 3)), _away_from_zero(r, (2, 3), 0.5, 2.0)], {}),
    "neg": lambda r: ([r.normal(size=(5,))], {}),
    "matmul": lambda r: ([r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))], {}),
    "relu": lambda r: ([_away_from_zero(r, (4, 5))], {}),
    "sigmoid": lambda r: ([r.normal(size=(4, 5)) * 2], {}),
    "exp": lambda r: ([r.normal(size=(6,))], {}),
    "log": lambda r: ([r.uniform(0.2, 3.0, size=(6,))], {}),
    "clip": lambda r: ([r.uniform(0.1, 0.9, size=(6,))], {"lo": 0.0, "hi": 1.0}),
    "softmax": lambda r: ([r.normal(size=(3, 5))], {"axis": -1}),
    "sum": lambda r: ([r.normal(size=(3, 4))], {"axis": 1, "keepdims": False}),
    "mean": lambda r: ([r.normal(size=(3, 4))], {"axis": None, "keepdims": False}),
    "reshape": lambda r: ([r.normal(size=(3, 4))], {"shape": (2, 6)}),
    "conv2d": lambda r: ([r.normal(size=(2, 5, 6, 2)), r.normal(size=(3, 3, 2, 3))], {"strides": (2, 1)}),
    "conv2d_transpose": lambda r: (
        [r.normal(size=(2, 3, 3, 2)), r.normal(size=(3, 3, 1, 2))],
        {"strides": (2, 2), "out_hw": (5, 6)},
    ),
    "maxpool2d": lambda r: ([_distinct(r, (2, 5, 3, 2))], {"window": (2, 2), "strides": (2, 1)}),
    "upsample": lambda r: ([r.normal(size=(1, 3, 2, 2))], {"factors": (2, 1), "out_hw": (5, 2)}),
}


def check_primitive(kind: str, rng: np.random.Generator, h: float = H) -> float:
    """Max relative error over all inputs of one random instance of ``kind``."""
    inputs, attrs = CASES[kind](rng)
    g = Graph()
    ts = [g.parameter(f"x{i}", v) for i, v in enumerate(inputs)]
    out = apply_primitive(kind, *ts, **attrs)
    # random projection to a scalar keeps every output entry in play
    proj = rng.normal(size=out.shape)
    loss = apply_primitive("sum", apply_primitive("mul", out, proj))
    return max(finite_difference_check(g, loss, f"x{i}", h) for i in range(len(inputs)))


def _random_point(rng: np.random.Generator, cfg: ModelConfig, num_patients: int, batch: int):
    params = init_params(cfg, num_patients, int(rng.integers(2**31)))
    for name, a in params.arrays.items():
        if is_weight(name):
            params.arrays[name] = a * rng.uniform(1.0, 2.0)
        else:
            params.arrays[name] = rng.uniform(0.05, 0.3, size=a.shape) * rng.choice([-1.0, 1.0], size=a.shape)
    E = rng.normal(size=(batch, cfg.window, cfg.channels))
    ys = np.arange(batch) % 2
    yp = rng.integers(0, num_patients, size=batch)
    return params, E, ys, yp


def check_end_to_end(rng: np.random.Generator, cfg: ModelConfig = REDUCED, num_patients: int = 3,
                     batch: int = 2, entries_per_tensor: int | None = 6, h: float = H) -> dict[str, float]:
    """Relative error per parameter tensor of the total loss at one random point."""
    params, E, ys, yp = _random_point(rng, cfg, num_patients, batch)
    fp = forward(params, E, cfg, seizure_labels=ys, patient_labels=yp, mode="eval")
    errs = {}
    for name, arr in params.arrays.items():
        n = arr.size
        if entries_per_tensor is None or n <= entries_per_tensor:
            idx = range(n)
        else:
            idx = rng.choice(n, size=entries_per_tensor, replace=False)
        errs[name] = finite_difference_check(fp.graph, fp.loss_total, name, h, idx)
    return errs


@dataclass
class SuiteResult:
    primitive_errors: dict[str, float]
    end_to_end_error: float
    points: int
    seconds: float

    @property
    def worst(self) -> float:
        return max(max(self.primitive_errors.values()), self.end_to_end_error)


def run_suite(points: int = 20, seed: int = 0, h: float = H) -> SuiteResult:
    """Check every primitive and the end-to-end loss at ``points`` random points each."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    prim = {k: max(check_primitive(k, rng, h) for _ in range(points)) for k in CASES}
    e2e = 0.0
    for _ in range(points):
        e2e = max(e2e, max(check_end_to_end(rng, h=h).values()))
    return SuiteResult(prim, e2e, points, time.perf_counter() - t0)


def check_gradient_flow_separation(cfg: ModelConfig = REDUCED, seed: int = 0) -> tuple[float, float]:
    """Largest |dL_s/d(patient params)| and |dL_p/d(seizure classifier/attention params)|."""
    rng = np.random.default_rng(seed)
    params, E, ys, yp = _random_point(rng, cfg, 3, 2)
    fp = forward(params, E, cfg, seizure_labels=ys, patient_labels=yp)
    gs = backward(fp.graph, fp.loss_seizure)
    gp = backward(fp.graph, fp.loss_patient)
    s_leak = max(float(np.abs(gs[n]).max()) for n in gs if n.startswith(("pat.", "enc_p.", "dec_")))
    p_leak = max(float(np.abs(gp[n]).max()) for n in gp if n.startswith(("seiz.", "att.", "enc_s.", "dec_")))
    return s_leak, p_leak
