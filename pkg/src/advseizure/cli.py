"""Command-line entry point.

Every subcommand accepts ``--config`` (a JSON file) and the shared flag
overrides; flags win over the file.  The file may hold four sections::

    {"model": {...ModelConfig fields...},
     "train": {...TrainConfig fields...},
     "data":  {"overlap": 0.5, "sampling_rate": 250, "select": true,
               "min_seizure_seconds": 250, "subjects": null, "threshold": 0.5},
     "synth": {"subjects": 3, "seconds": 8.32, "blocks": 2, "format": "binary"}}

Exit status is 0 on success, 2 for usage or configuration errors (nothing is
written in that case) and 1 when a stage fails while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataset import (
    DatasetError,
    WindowSet,
    build_loo_splits,
    generate_synthetic,
    make_window_set,
    select_subjects,
)
from .gradsuite import run_suite
from .metrics import export_topography, fold_report, subject_attention, write_report
from .model import ModelConfig, load_checkpoint, predict_proba
from .protocol import run_fold, run_loo, worker_count
from .recordio import read_manifest, write_binary, write_csv, write_manifest
from .trainer import TrainConfig

log = logging.getLogger("advseizure")

DATA_DEFAULTS: dict[str, Any] = {
    "overlap": 0.5,
    "sampling_rate": 250.0,
    "select": True,
    "min_seizure_seconds": 250.0,
    "subjects": None,
    "threshold": 0.5,
}
SYNTH_DEFAULTS: dict[str, Any] = {"subjects": 3, "seconds": 8.32, "blocks": 2, "format": "binary"}
SECTIONS = ("model", "train", "data", "synth")


class ConfigError(Exception):
    """Bad configuration or usage: exit status 2."""


class StageError(Exception):
    """A pipeline stage failed: exit status 1."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage} failed: {exc}")
        self.stage = stage


@dataclass
class RunConfig:
    command: str
    model: ModelConfig
    train: TrainConfig
    data: dict[str, Any]
    synth: dict[str, Any]
    manifest: Path | None = None
    out: Path | None = None
    fold: int | None = None
    checkpoint: Path | None = None
    workers: int = 1
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": dict(vars(self.train)),
            "data": dict(self.data),
            "synth": dict(self.synth),
        }


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--manifest", type=Path, help="dataset manifest (JSON)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--batch", type=int, help="mini-batch size")
    common.add_argument("--fold", type=int, help="test subject id (default: all folds)")
    common.add_argument("--keep-rate", type=float, dest="keep_rate", help="dropout keep probability")
    common.add_argument("--w1", type=float, help="seizure-component mixing weight; w2 = 1 - w1")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="advseizure", description="Adversarial EEG decomposition seizure detector")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset and its manifest")
    sub.add_parser("ingest", parents=[common], help="convert a CSV dataset to the binary format")
    sub.add_parser("train", parents=[common], help="train and score one leave-one-subject-out fold")
    sub.add_parser("loo", parents=[common], help="run every fold and write the aggregate table")
    for name, desc in (("eval", "score a checkpoint on one subject"),
                       ("attention-map", "attention topography of a checkpoint on one subject")):
        sp = sub.add_parser(name, parents=[common], help=desc)
        sp.add_argument("--checkpoint", type=Path, required=True)
    gp = sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suite")
    gp.add_argument("--points", type=int, default=20)
    return p


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path}: top level must be an object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"config file {path}: unknown section(s) {sorted(unknown)}")
    return doc


def _merge(defaults: dict, given: dict | None, section: str) -> dict:
    given = given or {}
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    return {**defaults, **given}


def resolve(args: argparse.Namespace) -> RunConfig:
    """Combine the config file with flag overrides and validate everything."""
    doc = _load_config_file(args.config)
    try:
        model = ModelConfig.from_dict(doc.get("model", {}))
        train = TrainConfig.from_dict(doc.get("train", {}))
        if args.w1 is not None:
            model = replace(model, w1=args.w1, w2=1.0 - args.w1)
        overrides = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs), ("lr", args.lr),
                                        ("batch_size", args.batch), ("keep_rate", args.keep_rate)) if v is not None}
        train = replace(train, **overrides)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc).strip("'\"")) from None
    data = _merge(DATA_DEFAULTS, doc.get("data"), "data")
    synth = _merge(SYNTH_DEFAULTS, doc.get("synth"), "synth")
    if synth["format"] not in ("binary", "csv"):
        raise ConfigError(f"synth format must be 'binary' or 'csv', got {synth['format']!r}")
    try:
        workers = worker_count()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    cfg = RunConfig(
        command=args.command,
        model=model,
        train=train,
        data=data,
        synth=synth,
        manifest=args.manifest.resolve() if args.manifest else None,
        out=args.out.resolve() if args.out else None,
        fold=args.fold,
        checkpoint=getattr(args, "checkpoint", None),
        workers=workers,
        extra={"points": getattr(args, "points", None)},
    )
    if cfg.checkpoint is not None:
        cfg.checkpoint = cfg.checkpoint.resolve()
    _require(cfg)
    return cfg


def _require(cfg: RunConfig) -> None:
    needs = {
        "synth": ("out",),
        "ingest": ("manifest", "out"),
        "train": ("manifest", "out", "fold"),
        "loo": ("manifest", "out"),
        "eval": ("manifest", "checkpoint", "fold"),
        "attention-map": ("manifest", "checkpoint", "fold", "out"),
        "gradcheck": (),
    }[cfg.command]
    missing = [f"--{n}" for n in needs if getattr(cfg, n) is None]
    if missing:
        raise ConfigError(f"{cfg.command} needs {', '.join(missing)}")
    if cfg.manifest is not None and not cfg.manifest.exists():
        raise ConfigError(f"manifest {cfg.manifest} does not exist")
    if cfg.checkpoint is not None and not cfg.checkpoint.exists():
        raise ConfigError(f"checkpoint {cfg.checkpoint} does not exist")


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def _stage(name: str, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported against its stage
        raise StageError(name, exc) from exc


def load_windows(cfg: RunConfig) -> WindowSet:
    manifest = read_manifest(cfg.manifest)
    recs = manifest.load()
    if cfg.data["subjects"] is not None:
        wanted = set(int(s) for s in cfg.data["subjects"])
        recs = [r for r in recs if r.subject in wanted]
    if cfg.data["select"]:
        keep = set(select_subjects(recs, cfg.data["min_seizure_seconds"]))
        dropped = sorted(r.subject for r in recs if r.subject not in keep)
        if dropped:
            log.warning("dropping subjects with too little seizure time: %s", dropped)
        recs = [r for r in recs if r.subject in keep]
    if not recs:
        raise DatasetError("no subjects left after selection")
    return make_window_set(recs, cfg.model.window, cfg.data["overlap"], cfg.data["sampling_rate"])


def cmd_synth(cfg: RunConfig) -> int:
    s = cfg.synth
    recs = _stage("synthesize", generate_synthetic, int(s["subjects"]), float(s["seconds"]),
                  cfg.train.seed, rate=cfg.data["sampling_rate"], blocks=int(s["blocks"]))
    cfg.out.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in recs:
        if s["format"] == "binary":
            name = f"subject_{r.subject:02d}.bin"
            _stage("write", write_binary, r, cfg.out / name)
        else:
            name = f"subject_{r.subject:02d}.csv"
            _stage("write", write_csv, r, cfg.out / name)
        entries.append((r.subject, name))
    write_manifest(cfg.out / "manifest.json", entries, s["format"], cfg.data["sampling_rate"])
    print(f"wrote {len(recs)} recordings and {cfg.out / 'manifest.json'}")
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    manifest = _stage("read manifest", read_manifest, cfg.manifest)
    recs = _stage("load recordings", manifest.load)
    cfg.out.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in recs:
        name = f"subject_{r.subject:02d}.bin"
        _stage("write", write_binary, r, cfg.out / name)
        entries.append((r.subject, name))
    write_manifest(cfg.out / "manifest.json", entries, "binary", manifest.sampling_rate)
    print(f"converted {len(recs)} recordings into {cfg.out}")
    return 0


def _write_run_config(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_train(cfg: RunConfig) -> int:
    ws = _stage("load dataset", load_windows, cfg)
    plan = _stage("split", build_loo_splits, np.unique(ws.subjects))
    try:
        fold = plan.fold_for(cfg.fold)
    except KeyError:
        raise ConfigError(f"--fold {cfg.fold} is not one of the subjects {[f.test_subject for f in plan]}") from None
    _write_run_config(cfg)
    result = _stage("train", run_fold, ws, fold, cfg.train, cfg.model, cfg.out, cfg.data["threshold"])
    print(f"subject {fold.test_subject}: accuracy {result.report['accuracy']:.4f}")
    return 0


def cmd_loo(cfg: RunConfig) -> int:
    ws = _stage("load dataset", load_windows, cfg)
    subjects = np.unique(ws.subjects)
    if cfg.fold is not None and cfg.fold not in set(subjects.tolist()):
        raise ConfigError(f"--fold {cfg.fold} is not one of the subjects {subjects.tolist()}")
    _write_run_config(cfg)
    folds = None if cfg.fold is None else [cfg.fold]
    results = _stage("loo", run_loo, ws, cfg.train, cfg.model, cfg.out, subjects, folds,
                     cfg.workers, cfg.data["threshold"])
    for r in results:
        acc = r.report["accuracy"]
        print(f"subject {r.fold.test_subject}: accuracy {acc:.4f}" if acc is not None else
              f"subject {r.fold.test_subject}: no windows")
    print((cfg.out / "aggregate.tsv").read_text(), end="")
    return 0


def _subject_windows(cfg: RunConfig):
    ws = _stage("load dataset", load_windows, cfg)
    test = ws.for_subjects([cfg.fold])
    if len(test) == 0:
        raise ConfigError(f"--fold {cfg.fold}: subject has no windows in the dataset")
    params = _stage("load checkpoint", load_checkpoint, cfg.checkpoint)
    _stage("check checkpoint", params.check, cfg.model)
    return test, params


def cmd_eval(cfg: RunConfig) -> int:
    test, params = _subject_windows(cfg)
    probs, _ = _stage("predict", predict_proba, params, test.X, cfg.model)
    report = fold_report(cfg.fold, test.y, probs, cfg.data["threshold"])
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_report(report, cfg.out / f"eval_{cfg.fold:02d}.json")
    cm = report["confusion"]
    print(f"subject {cfg.fold}: accuracy {report['accuracy']:.4f} "
          f"tp {cm['tp']} fp {cm['fp']} tn {cm['tn']} fn {cm['fn']} auc {report['auc']}")
    return 0


def cmd_attention_map(cfg: RunConfig) -> int:
    test, params = _subject_windows(cfg)
    _, att = _stage("predict", predict_proba, params, test.X, cfg.model)
    cfg.out.mkdir(parents=True, exist_ok=True)
    topo = _stage("export", export_topography, subject_attention(att),
                  cfg.out / f"topography_{cfg.fold:02d}", title=f"subject {cfg.fold}")
    print(f"subject {cfg.fold}: highest {topo.argmax}, lowest {topo.argmin}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    points = cfg.extra["points"]
    if points < 1:
        raise ConfigError("--points must be >= 1")
    res = _stage("gradcheck", run_suite, points, cfg.train.seed)
    for kind, err in res.primitive_errors.items():
        print(f"{kind:18s} {err:.3e}")
    print(f"{'end-to-end':18s} {res.end_to_end_error:.3e}")
    ok = res.worst < 1e-4
    print(f"max relative error {res.worst:.3e} over {points} points ({res.seconds:.1f} s): {'ok' if ok else 'FAILED'}")
    return 0 if ok else 1


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "loo": cmd_loo,
    "eval": cmd_eval,
    "attention-map": cmd_attention_map,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"advseizure: configuration error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"advseizure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
