"""On-disk formats for recordings, plus the dataset manifest.

CSV
    A header row with the 22 canonical channel names in montage order, then
    one row of microvolt values per time step.  Seizure annotations live in a
    sidecar ``<stem>.annotations.csv`` with header ``start,end,channels``;
    ``channels`` is a ``;``-separated list and ``end`` is exclusive.

Binary (little endian)
    ``b"ADVSZEEG"``, u32 version, i64 subject id, f64 sampling rate, u64 T,
    ``T * 22`` float64 samples in row-major order, u32 interval count, then per
    interval u64 start, u64 end, u32 channel count and that many u8 channel
    indices into the canonical montage.

Manifest
    JSON object ``{"format": "binary" | "csv", "sampling_rate": 250,
    "subjects": [{"id": 0, "path": "s0.bin"}, ...]}``; relative paths are
    resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from .dataset import AnnotationError, DatasetError, Interval, Recording
from .montage import CHANNELS, N_CHANNELS

BINARY_MAGIC = b"ADVSZEEG"
BINARY_VERSION = 1


class FormatError(DatasetError):
    pass


class HeaderError(FormatError):
    pass


def annotation_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".annotations.csv")


# --------------------------------------------------------------------------
# binary
# --------------------------------------------------------------------------


def write_binary(rec: Recording, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(BINARY_MAGIC)
    buf.write(struct.pack("<IqdQ", BINARY_VERSION, rec.subject, rec.rate, rec.n_samples))
    buf.write(np.ascontiguousarray(rec.samples, dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(rec.annotations)))
    for iv in rec.annotations:
        idx = [CHANNELS.index(c) for c in iv.channels]
        buf.write(struct.pack(f"<QQI{len(idx)}B", iv.start, iv.end, len(idx), *idx))
    Path(path).write_bytes(buf.getvalue())


def read_binary(path: str | Path) -> Recording:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated file while reading {what} (byte {pos} of {len(data)})")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(len(BINARY_MAGIC), "magic") != BINARY_MAGIC:
        raise FormatError(f"{path}: bad magic, not an EEG recording file")
    version, subject, rate, T = struct.unpack("<IqdQ", take(28, "header"))
    if version != BINARY_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    samples = np.frombuffer(take(8 * T * N_CHANNELS, "samples"), dtype="<f8").astype(np.float64)
    (count,) = struct.unpack("<I", take(4, "annotation count"))
    intervals = []
    for _ in range(count):
        start, end, k = struct.unpack("<QQI", take(20, "annotation"))
        idx = take(k, "annotation channels")
        if any(i >= N_CHANNELS for i in idx):
            raise AnnotationError(f"{path}: annotation channel index out of range")
        intervals.append(Interval(int(start), int(end), tuple(CHANNELS[i] for i in idx)))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} unexpected trailing bytes")
    return Recording(int(subject), float(rate), samples.reshape(T, N_CHANNELS), intervals)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def write_csv(rec: Recording, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHANNELS)
        for row in rec.samples:
            w.writerow([repr(float(v)) for v in row])
    with annotation_path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "end", "channels"])
        for iv in rec.annotations:
            w.writerow([iv.start, iv.end, ";".join(iv.channels)])


def _check_header(header: list[str], path) -> None:
    names = [h.strip().upper() for h in header]
    if names == list(CHANNELS):
        return
    missing = [c for c in CHANNELS if c not in names]
    extra = [n for n in names if n not in CHANNELS]
    if missing:
        raise HeaderError(f"{path}: header is missing channel(s) {missing}")
    if extra:
        raise HeaderError(f"{path}: header has unknown channel(s) {extra}")
    raise HeaderError(f"{path}: channels out of montage order; expected {list(CHANNELS)}, got {names}")


def read_annotations(path: str | Path) -> list[Interval]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["start", "end", "channels"]:
            raise HeaderError(f"{path}: annotation header must be start,end,channels")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                start, end = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise FormatError(f"{path}: line {lineno}: bad interval bounds {row[:2]}") from None
            chans = tuple(c.strip().upper() for c in row[2].split(";") if c.strip()) if len(row) > 2 else ()
            unknown = [c for c in chans if c not in CHANNELS]
            if unknown:
                raise AnnotationError(f"{path}: line {lineno}: unknown channel(s) {unknown}")
            out.append(Interval(start, end, chans))
    return out


def read_csv(path: str | Path, subject: int = 0, rate: float = 250.0) -> Recording:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise HeaderError(f"{path}: empty file")
        _check_header(header, path)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != N_CHANNELS:
                raise FormatError(f"{path}: row {lineno} has {len(row)} cells, expected {N_CHANNELS}")
            vals = []
            for col, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise FormatError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col + 1} ({CHANNELS[col]})"
                    ) from None
            rows.append(vals)
    samples = np.array(rows, dtype=np.float64).reshape(-1, N_CHANNELS)
    return Recording(subject, float(rate), samples, read_annotations(annotation_path(path)))


def load_recording(
    path: str | Path,
    format: Literal["csv", "binary"] = "binary",
    subject: int = 0,
    rate: float = 250.0,
) -> Recording:
    """Read a recording; for CSV the subject id and rate come from the caller."""
    if format == "binary":
        return read_binary(path)
    if format == "csv":
        return read_csv(path, subject, rate)
    raise ValueError(f"unknown recording format {format!r}")


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    format: str
    sampling_rate: float
    entries: tuple[tuple[int, Path], ...]

    def load(self) -> list[Recording]:
        recs = [load_recording(p, self.format, sid, self.sampling_rate) for sid, p in self.entries]
        for (sid, p), r in zip(self.entries, recs):
            if r.subject != sid:
                raise FormatError(f"{p}: file holds subject {r.subject}, manifest says {sid}")
        return recs


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    fmt = doc.get("format", "binary")
    if fmt not in ("binary", "csv"):
        raise FormatError(f"{path}: unknown format {fmt!r}")
    entries = []
    for item in doc.get("subjects", []):
        p = Path(item["path"])
        entries.append((int(item["id"]), p if p.is_absolute() else path.parent / p))
    if not entries:
        raise FormatError(f"{path}: manifest lists no subjects")
    return Manifest(fmt, float(doc.get("sampling_rate", 250.0)), tuple(entries))


def write_manifest(path: str | Path, entries: list[tuple[int, str]], format: str = "binary",
                   sampling_rate: float = 250.0) -> None:
    doc = {
        "format": format,
        "sampling_rate": sampling_rate,
        "subjects": [{"id": int(s), "path": str(p)} for s, p in entries],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
