import numpy as np
import pytest

from advseizure.dataset import Interval, Recording, generate_synthetic
from advseizure.montage import CHANNELS
from advseizure.recordio import (
    FormatError,
    HeaderError,
    annotation_path,
    load_recording,
    read_binary,
    read_csv,
    read_manifest,
    write_binary,
    write_csv,
    write_manifest,
)


@pytest.fixture
def rec():
    (r,) = generate_synthetic(1, 2.0, seed=3)
    r.subject = 7
    return r


def test_binary_round_trip_is_exact(tmp_path, rec):
    path = tmp_path / "s.bin"
    write_binary(rec, path)
    assert read_binary(path) == rec


def test_binary_truncation_and_garbage(tmp_path, rec):
    path = tmp_path / "s.bin"
    write_binary(rec, path)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:100])
    (tmp_path / "long.bin").write_bytes(raw + b"!")
    (tmp_path / "bad.bin").write_bytes(b"NOTMAGIC" + raw[8:])
    for name in ("short.bin", "long.bin", "bad.bin"):
        with pytest.raises(FormatError):
            read_binary(tmp_path / name)


def test_csv_round_trip_is_exact(tmp_path, rec):
    path = tmp_path / "s.csv"
    write_csv(rec, path)
    assert annotation_path(path).name == "s.annotations.csv"
    assert read_csv(path, subject=7) == rec


def test_csv_missing_channel_is_named(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text(",".join(CHANNELS[:-1]) + "\n" + ",".join(["0"] * 21) + "\n")
    with pytest.raises(HeaderError, match="T1"):
        read_csv(path)


def test_csv_non_numeric_cell_reports_position(tmp_path):
    path = tmp_path / "x.csv"
    row = ["0"] * 22
    row[4] = "abc"
    path.write_text(",".join(CHANNELS) + "\n" + ",".join(["1"] * 22) + "\n" + ",".join(row) + "\n")
    with pytest.raises(FormatError, match="row 3, column 5"):
        read_csv(path)


def test_csv_without_sidecar_has_no_annotations(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text(",".join(CHANNELS) + "\n" + ",".join(["1.5"] * 22) + "\n")
    r = read_csv(path, subject=2)
    assert r.annotations == [] and r.samples.shape == (1, 22)


def test_annotation_sidecar_unknown_channel(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text(",".join(CHANNELS) + "\n" + ",".join(["1"] * 22) + "\n")
    annotation_path(path).write_text("start,end,channels\n0,1,T5;QQ\n")
    with pytest.raises(Exception, match="QQ"):
        read_csv(path)


def test_manifest_round_trip(tmp_path, rec):
    write_binary(rec, tmp_path / "a.bin")
    write_manifest(tmp_path / "m.json", [(7, "a.bin")])
    m = read_manifest(tmp_path / "m.json")
    assert m.entries == ((7, tmp_path / "a.bin"),)
    assert m.load() == [rec]


def test_manifest_subject_mismatch(tmp_path, rec):
    write_binary(rec, tmp_path / "a.bin")
    write_manifest(tmp_path / "m.json", [(3, "a.bin")])
    with pytest.raises(FormatError, match="manifest says 3"):
        read_manifest(tmp_path / "m.json").load()


def test_manifest_rejects_bad_json_and_empty(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    (tmp_path / "empty.json").write_text('{"subjects": []}')
    for name in ("bad.json", "empty.json"):
        with pytest.raises(FormatError):
            read_manifest(tmp_path / name)


def test_load_recording_dispatch(tmp_path, rec):
    write_csv(rec, tmp_path / "r.csv")
    assert load_recording(tmp_path / "r.csv", "csv", subject=7) == rec
    with pytest.raises(ValueError):
        load_recording(tmp_path / "r.csv", "edf")


def test_readers_do_not_modify_files(tmp_path):
    r = Recording(1, 250.0, np.arange(44.0).reshape(2, 22), [Interval(0, 2, ("T5", "O1"))])
    write_binary(r, tmp_path / "r.bin")
    before = (tmp_path / "r.bin").read_bytes()
    read_binary(tmp_path / "r.bin")
    assert (tmp_path / "r.bin").read_bytes() == before
