"""Joint training with an extra seizure-loss step.

Each batch gets two Adam updates from two independent optimisers: one on the
total loss over every parameter, then one on the seizure loss alone over the
parameters it depends on (seizure encoder, attention, seizure classifier).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

from .dataset import DatasetError, WindowSet
from .model import (
    ModelConfig,
    ModelParameters,
    forward,
    init_params,
    on_seizure_path,
    save_checkpoint,
)
from .optim import AdamState, adam_step
from .tensor import NumericFault, backward

log = logging.getLogger(__name__)


class TrainingFault(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    lr: float = 1e-4
    batch_size: int = 64
    keep_rate: float = 0.8
    seed: int = 0
    seizure_step: Literal["batch", "epoch"] = "batch"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.keep_rate <= 1.0:
            raise ValueError(f"keep rate must lie in (0, 1], got {self.keep_rate}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.seizure_step not in ("batch", "epoch"):
            raise ValueError(f"seizure_step must be 'batch' or 'epoch', got {self.seizure_step!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    recon: float
    seizure: float
    patient: float
    l2: float
    total: float
    accuracy: float
    seconds: float = 0.0


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def to_jsonl(self) -> str:
        """One JSON object per epoch, wall-clock time excluded."""
        lines = []
        for r in self.records:
            d = asdict(r)
            d.pop("seconds")
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + "\n"

    def timings_jsonl(self) -> str:
        return "".join(json.dumps({"epoch": r.epoch, "seconds": r.seconds}) + "\n" for r in self.records)

    def write(self, path: str | Path, timings: str | Path | None = None) -> None:
        Path(path).write_text(self.to_jsonl())
        if timings is not None:
            Path(timings).write_text(self.timings_jsonl())

    @classmethod
    def read(cls, path: str | Path) -> "TrainLog":
        recs = [EpochRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line]
        return cls(recs)


@dataclass
class Optimizers:
    total: AdamState
    seizure: AdamState

    @classmethod
    def create(cls, params: ModelParameters, lr: float) -> "Optimizers":
        seiz = {n: a for n, a in params.arrays.items() if on_seizure_path(n)}
        return cls(AdamState.for_params(params.arrays, lr=lr), AdamState.for_params(seiz, lr=lr))


Batch = tuple[np.ndarray, np.ndarray, np.ndarray]  # windows, seizure labels, patient classes
StepHook = Callable[[ModelParameters, ModelParameters], None]


def total_step(params: ModelParameters, batch: Batch, opt: AdamState, model_cfg: ModelConfig,
               keep_rate: float, rng: np.random.Generator):
    X, y, pid = batch
    fp = forward(params, X, model_cfg, seizure_labels=y, patient_labels=pid,
                 mode="train", keep_rate=keep_rate, rng=rng)
    grads = backward(fp.graph, fp.loss_total)
    new_arrays, opt = adam_step(params.arrays, grads, opt)
    correct = int(((fp.prob.data >= 0.5).astype(np.int64) == y).sum())
    return ModelParameters(params.num_patients, new_arrays), opt, fp.bundle(), correct


def seizure_step(params: ModelParameters, batch: Batch, opt: AdamState, model_cfg: ModelConfig,
                 keep_rate: float, rng: np.random.Generator):
    """Adam step on the seizure loss; only seizure-path parameters move."""
    X, y, _ = batch
    fp = forward(params, X, model_cfg, seizure_labels=y, mode="train",
                 keep_rate=keep_rate, rng=rng, branches="seizure")
    grads = backward(fp.graph, fp.loss_seizure)
    new_arrays, opt = adam_step(params.arrays, grads, opt)
    return ModelParameters(params.num_patients, new_arrays), opt


def train_epoch(
    params: ModelParameters,
    batches: Sequence[Batch],
    optimizers: Optimizers,
    model_cfg: ModelConfig,
    config: TrainConfig,
    rng: np.random.Generator,
    epoch: int = 1,
    after_seizure_step: StepHook | None = None,
) -> tuple[ModelParameters, EpochRecord]:
    """One pass over ``batches``; ``optimizers`` is updated in place."""
    if not batches:
        raise DatasetError("no batches to train on")
    t0 = time.perf_counter()
    sums = np.zeros(5)
    correct = seen = 0

    def extra(params, batch):
        before = params
        params, optimizers.seizure = seizure_step(params, batch, optimizers.seizure, model_cfg, config.keep_rate, rng)
        if after_seizure_step is not None:
            after_seizure_step(before, params)
        return params

    for i, batch in enumerate(batches):
        try:
            params, optimizers.total, losses, ok = total_step(
                params, batch, optimizers.total, model_cfg, config.keep_rate, rng
            )
            if config.seizure_step == "batch":
                params = extra(params, batch)
        except NumericFault as exc:
            raise TrainingFault(f"epoch {epoch}, batch {i}: {exc}") from exc
        n = len(batch[1])
        sums += n * np.array([losses.recon, losses.seizure, losses.patient, losses.l2, losses.total])
        correct += ok
        seen += n
    if config.seizure_step == "epoch":
        for i, batch in enumerate(batches):
            try:
                params = extra(params, batch)
            except NumericFault as exc:
                raise TrainingFault(f"epoch {epoch}, seizure pass batch {i}: {exc}") from exc
    m = sums / seen
    rec = EpochRecord(epoch, *(float(v) for v in m), accuracy=correct / seen,
                      seconds=time.perf_counter() - t0)
    return params, rec


def make_batches(ws: WindowSet, patient_labels: np.ndarray, batch_size: int,
                 rng: np.random.Generator | None) -> list[Batch]:
    order = np.arange(len(ws)) if rng is None else rng.permutation(len(ws))
    out = []
    for i in range(0, len(order), batch_size):
        idx = order[i : i + batch_size]
        out.append((ws.X[idx], ws.y[idx], patient_labels[idx]))
    return out


def fit(
    train: WindowSet,
    config: TrainConfig,
    model_cfg: ModelConfig,
    subjects: Sequence[int] | None = None,
    params: ModelParameters | None = None,
    checkpoint_dir: str | Path | None = None,
    after_seizure_step: StepHook | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParameters, TrainLog]:
    """Train from scratch (or from ``params``) for ``config.epochs`` epochs.

    ``subjects`` lists the training subjects; their order fixes the patient
    class indices.  It defaults to the sorted subjects present in ``train``.
    """
    if len(train) == 0:
        raise DatasetError("training set is empty")
    present = sorted(int(s) for s in np.unique(train.subjects))
    subjects = present if subjects is None else [int(s) for s in subjects]
    stray = set(present) - set(subjects)
    if stray:
        raise DatasetError(f"training windows from subjects {sorted(stray)} outside the training subject set")
    class_index = {s: i for i, s in enumerate(subjects)}
    pid = np.array([class_index[int(s)] for s in train.subjects], dtype=np.int64)

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    if params is None:
        params = init_params(model_cfg, len(subjects), int(seeds[0].generate_state(1)[0]))
    params.check(model_cfg)
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    opts = Optimizers.create(params, config.lr)
    history = TrainLog()
    for epoch in range(1, config.epochs + 1):
        batches = make_batches(train, pid, config.batch_size, shuffle_rng)
        params, rec = train_epoch(params, batches, opts, model_cfg, config, dropout_rng, epoch, after_seizure_step)
        history.records.append(rec)
        log.info("epoch %d: total %.5f (recon %.5f, seizure %.5f, patient %.5f, l2 %.5f) acc %.3f",
                 epoch, rec.total, rec.recon, rec.seizure, rec.patient, rec.l2, rec.accuracy)
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(params, Path(checkpoint_dir) / f"epoch{epoch:04d}.ckpt")
    return params, history
