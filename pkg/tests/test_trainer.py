import numpy as np
import pytest

from advseizure.dataset import DatasetError, generate_synthetic, make_window_set
from advseizure.model import ModelConfig, init_params, on_seizure_path
from advseizure.trainer import (
    Optimizers,
    TrainConfig,
    TrainingFault,
    TrainLog,
    fit,
    make_batches,
    train_epoch,
)


@pytest.fixture(scope="module")
def tiny():
    recs = generate_synthetic(3, 0.5, seed=0, blocks=2)
    return make_window_set(recs, length=16, overlap=0.5)


# all 22 channels, 16-sample windows, one or two filters per layer
REDUCED = ModelConfig(window=16, enc_filters=2, cls_filters=(2, 1, 2, 2), fc_hidden=5)
CFG = TrainConfig(epochs=3, lr=1e-3, batch_size=8, seed=0)


def test_fit_is_deterministic(tiny):
    p1, h1 = fit(tiny, CFG, REDUCED)
    p2, h2 = fit(tiny, CFG, REDUCED)
    assert h1.to_jsonl() == h2.to_jsonl()
    for k in p1.arrays:
        assert p1[k].tobytes() == p2[k].tobytes()


def test_different_seed_changes_the_run(tiny):
    _, h1 = fit(tiny, CFG, REDUCED)
    _, h2 = fit(tiny, TrainConfig(epochs=3, lr=1e-3, batch_size=8, seed=1), REDUCED)
    assert h1.to_jsonl() != h2.to_jsonl()


def test_log_has_one_record_per_epoch(tiny, tmp_path):
    _, h = fit(tiny, CFG, REDUCED)
    assert [r.epoch for r in h] == [1, 2, 3]
    h.write(tmp_path / "log.jsonl", tmp_path / "t.jsonl")
    assert "seconds" not in (tmp_path / "log.jsonl").read_text()
    assert len((tmp_path / "t.jsonl").read_text().splitlines()) == 3
    back = TrainLog.read(tmp_path / "log.jsonl")
    assert [r.total for r in back] == [r.total for r in h]


def test_seizure_step_leaves_other_params_bit_identical(tiny):
    touched = []

    def hook(before, after):
        for name in before.arrays:
            same = before[name].tobytes() == after[name].tobytes()
            if on_seizure_path(name):
                touched.append(not same)
            else:
                assert same, name

    fit(tiny, CFG, REDUCED, after_seizure_step=hook)
    assert any(touched)


def test_epoch_mode_runs_seizure_pass_after_the_epoch(tiny):
    calls = []
    cfg = TrainConfig(epochs=1, lr=1e-3, batch_size=8, seizure_step="epoch")
    fit(tiny, cfg, REDUCED, after_seizure_step=lambda a, b: calls.append(1))
    assert len(calls) == len(make_batches(tiny, np.zeros(len(tiny), int), 8, None))


def test_optimisers_are_separate():
    params = init_params(REDUCED, 3, 0)
    opts = Optimizers.create(params, 1e-3)
    assert set(opts.total.m) == set(params.arrays)
    assert set(opts.seizure.m) == {n for n in params.arrays if on_seizure_path(n)}


def test_checkpoints_every_n_epochs(tiny, tmp_path):
    fit(tiny, TrainConfig(epochs=2, lr=1e-3, batch_size=8, checkpoint_every=1), REDUCED, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch0001.ckpt", "epoch0002.ckpt"]


def test_nan_input_names_the_batch(tiny):
    params = init_params(REDUCED, 3, 0)
    X = tiny.X[:4].copy()
    X[1, 3, 2] = np.nan
    batches = [(tiny.X[:4], tiny.y[:4], np.zeros(4, int)), (X, tiny.y[:4], np.zeros(4, int))]
    with pytest.raises(TrainingFault, match="batch 1"):
        train_epoch(params, batches, Optimizers.create(params, 1e-3), REDUCED, CFG, np.random.default_rng(0))


def test_stray_subject_rejected(tiny):
    with pytest.raises(DatasetError):
        fit(tiny, CFG, REDUCED, subjects=[0, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(keep_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(KeyError):
        TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})


def test_batches_cover_every_window_once(tiny):
    pid = np.zeros(len(tiny), int)
    batches = make_batches(tiny, pid, 7, np.random.default_rng(0))
    total = sum(len(b[1]) for b in batches)
    assert total == len(tiny)
    assert all(len(b[1]) == 7 for b in batches[:-1])
