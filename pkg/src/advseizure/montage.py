"""Canonical 22-channel 10/20 montage and its 2-D head-model coordinates.

Channel order is fixed for every file format and for the attention vector:
index ``k`` of an attention vector always refers to ``CHANNELS[k]``.

Coordinates are an azimuthal projection onto a unit disc seen from above,
nose pointing to +y and the left hemisphere at -x.  The outer electrode ring
(Fp1 ... O2) sits at radius 0.8, the earlobes just outside it.
"""

from __future__ import annotations

import math

CHANNELS: tuple[str, ...] = (
    "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2", "F7",
    "F8", "T3", "T4", "T5", "T6", "A1", "A2", "FZ", "CZ", "PZ", "T1",
)  # fmt: skip

N_CHANNELS = len(CHANNELS)

_RING = 0.8


def _polar(angle_deg: float, radius: float) -> tuple[float, float]:
    a = math.radians(angle_deg)
    return (round(radius * math.cos(a), 6), round(radius * math.sin(a), 6))


def _mid(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    return (round((a[0] + b[0]) / 2, 6), round((a[1] + b[1]) / 2, 6))


def _build() -> dict[str, tuple[float, float]]:
    pos = {
        "FP1": _polar(108, _RING), "FP2": _polar(72, _RING),
        "F7": _polar(144, _RING), "F8": _polar(36, _RING),
        "T3": _polar(180, _RING), "T4": _polar(0, _RING),
        "T5": _polar(216, _RING), "T6": _polar(324, _RING),
        "O1": _polar(252, _RING), "O2": _polar(288, _RING),
        "FZ": (0.0, 0.4), "CZ": (0.0, 0.0), "PZ": (0.0, -0.4),
        "A1": _polar(195, 0.97), "A2": _polar(345, 0.97),
        "T1": _polar(162, 0.92),
    }  # fmt: skip
    pos["F3"] = _mid(pos["FZ"], pos["F7"])
    pos["F4"] = _mid(pos["FZ"], pos["F8"])
    pos["C3"] = _mid(pos["CZ"], pos["T3"])
    pos["C4"] = _mid(pos["CZ"], pos["T4"])
    pos["P3"] = _mid(pos["PZ"], pos["T5"])
    pos["P4"] = _mid(pos["PZ"], pos["T6"])
    return {ch: pos[ch] for ch in CHANNELS}


COORDINATES: dict[str, tuple[float, float]] = _build()


def channel_index(name: str) -> int:
    try:
        return CHANNELS.index(name.upper())
    except ValueError:
        raise KeyError(f"{name!r} is not a channel of the canonical montage") from None


def nearest_channels(center: str, count: int) -> list[str]:
    """The ``count`` channels closest to ``center`` on the head model (center first)."""
    cx, cy = COORDINATES[CHANNELS[channel_index(center)]]
    return sorted(
        CHANNELS,
        key=lambda ch: (math.hypot(COORDINATES[ch][0] - cx, COORDINATES[ch][1] - cy), CHANNELS.index(ch)),
    )[:count]
