"""Leave-one-subject-out runs: train per fold, score the held-out subject."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Fold, SplitPlan, WindowSet, build_loo_splits, split_fold
from .metrics import aggregate_table, export_topography, fold_report, subject_attention, write_report
from .model import ModelConfig, ModelParameters, predict_proba, save_checkpoint
from .trainer import TrainConfig, TrainLog, fit

log = logging.getLogger(__name__)

WORKERS_ENV = "ADVSEIZURE_WORKERS"


@dataclass
class FoldResult:
    fold: Fold
    params: ModelParameters
    log: TrainLog
    report: dict
    attention: np.ndarray  # subject-level mean, [22]
    probs: np.ndarray


def fold_seed(seed: int, subject: int) -> int:
    """Per-fold seed, independent of fold order and worker count."""
    return int(np.random.SeedSequence([seed, subject]).generate_state(1)[0])


def run_fold(ws: WindowSet, fold: Fold, train_cfg: TrainConfig, model_cfg: ModelConfig,
             out_dir: str | Path | None = None, threshold: float = 0.5) -> FoldResult:
    train, test = split_fold(ws, fold)
    cfg = replace(train_cfg, seed=fold_seed(train_cfg.seed, fold.test_subject))
    fold_dir = None
    if out_dir is not None:
        fold_dir = Path(out_dir) / f"fold_{fold.test_subject:02d}"
        fold_dir.mkdir(parents=True, exist_ok=True)
    params, history = fit(train, cfg, model_cfg, fold.train_subjects, checkpoint_dir=fold_dir)
    probs, att = predict_proba(params, test.X, model_cfg)
    report = fold_report(fold.test_subject, test.y, probs, threshold)
    mean_att = subject_attention(att)
    report["attention"] = mean_att.tolist()
    if fold_dir is not None:
        history.write(fold_dir / "trainlog.jsonl", fold_dir / "timings.jsonl")
        save_checkpoint(params, fold_dir / "model.ckpt")
        write_report(report, fold_dir / "metrics.json")
        export_topography(mean_att, fold_dir / "topography", title=f"subject {fold.test_subject}")
    return FoldResult(fold, params, history, report, mean_att, probs)


def _worker(args):
    ws, fold, train_cfg, model_cfg, out_dir, threshold = args
    r = run_fold(ws, fold, train_cfg, model_cfg, out_dir, threshold)
    return r


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer") from None


def run_loo(ws: WindowSet, train_cfg: TrainConfig, model_cfg: ModelConfig,
            out_dir: str | Path | None = None, subjects: Sequence[int] | None = None,
            folds: Sequence[int] | None = None, workers: int | None = None,
            threshold: float = 0.5) -> list[FoldResult]:
    """Train and score every fold (or those whose test subject is in ``folds``).

    With an ``out_dir`` each fold gets its own directory and an aggregate
    accuracy table is written once all folds are done.
    """
    plan: SplitPlan = build_loo_splits(subjects if subjects is not None else np.unique(ws.subjects))
    chosen = [f for f in plan if folds is None or f.test_subject in set(folds)]
    if not chosen:
        raise ValueError(f"no fold matches {list(folds or [])}")
    workers = worker_count() if workers is None else workers
    jobs = [(ws, f, train_cfg, model_cfg, out_dir, threshold) for f in chosen]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    if out_dir is not None:
        write_aggregate(results, out_dir)
    return results


def write_aggregate(results: Sequence[FoldResult], out_dir: str | Path) -> None:
    accs = {r.fold.test_subject: r.report["accuracy"] for r in results}
    Path(out_dir, "aggregate.tsv").write_text(aggregate_table(accs))
    valid = [a for a in accs.values() if a is not None]
    write_report(
        {
            "folds": [r.report for r in results],
            "accuracy": {str(k): v for k, v in accs.items()},
            "average_accuracy": sum(valid) / len(valid) if valid else None,
        },
        Path(out_dir, "aggregate.json"),
    )
