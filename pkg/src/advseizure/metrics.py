"""Classification metrics, ROC/AUC and attention topographies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .montage import CHANNELS, COORDINATES, N_CHANNELS


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def confusion_and_rates(labels, predictions):
    """Confusion counts plus accuracy, sensitivity and specificity.

    A rate whose denominator is zero is returned as ``None``.
    """
    y = np.asarray(labels).astype(np.int64).ravel()
    p = np.asarray(predictions).astype(np.int64).ravel()
    if y.shape != p.shape:
        raise ValueError(f"{y.size} labels but {p.size} predictions")
    for name, a in (("labels", y), ("predictions", p)):
        if a.size and not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} must be 0/1")
    cm = ConfusionMatrix(
        tp=int(((y == 1) & (p == 1)).sum()),
        fp=int(((y == 0) & (p == 1)).sum()),
        tn=int(((y == 0) & (p == 0)).sum()),
        fn=int(((y == 1) & (p == 0)).sum()),
    )
    return (
        cm,
        _ratio(cm.tp + cm.tn, cm.total),
        _ratio(cm.tp, cm.tp + cm.fn),
        _ratio(cm.tn, cm.tn + cm.fp),
    )


def roc_auc(labels, scores) -> tuple[list[tuple[float, float]], float]:
    """ROC points ``(fpr, tpr)`` and the trapezoidal area under them.

    Thresholds sweep the distinct scores from high to low, predicting
    positive when ``score >= threshold``; a leading ``+inf`` threshold
    contributes the ``(0, 0)`` corner.
    """
    y = np.asarray(labels).astype(np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValueError(f"{y.size} labels but {s.size} scores")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative example")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s_sorted.size - 1]
    tps = np.cumsum(y_sorted == 1)[ends]
    fps = np.cumsum(y_sorted == 0)[ends]
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def fold_report(subject: int, labels, probs, threshold: float = 0.5) -> dict:
    """Structured per-fold metrics, ready for :func:`write_report`."""
    labels = np.asarray(labels).astype(np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    cm, acc, sens, spec = confusion_and_rates(labels, (probs >= threshold).astype(np.int64))
    try:
        points, auc = roc_auc(labels, probs)
    except ValueError:
        points, auc = [], None
    return {
        "subject": int(subject),
        "threshold": threshold,
        "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
        "accuracy": acc,
        "sensitivity": sens,
        "specificity": spec,
        "auc": auc,
        "roc": [list(p) for p in points],
    }


def write_report(report: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# topography
# --------------------------------------------------------------------------

# cool -> neutral -> warm anchors
_COLD = (59, 76, 192)
_MID = (221, 221, 221)
_WARM = (180, 4, 38)


def weight_color(u: float) -> str:
    """Hex colour for a weight normalised to [0, 1]."""
    u = min(max(u, 0.0), 1.0)
    a, b, t = (_COLD, _MID, u * 2) if u < 0.5 else (_MID, _WARM, (u - 0.5) * 2)
    return "#" + "".join(f"{round(x + (y - x) * t):02x}" for x, y in zip(a, b))


@dataclass(frozen=True)
class TopographyMap:
    weights: dict[str, float]
    coordinates: dict[str, tuple[float, float]]

    def __post_init__(self):
        if list(self.weights) != list(CHANNELS):
            raise ValueError("topography must list the 22 canonical channels in montage order")

    def vector(self) -> np.ndarray:
        return np.array([self.weights[c] for c in CHANNELS])

    @property
    def argmax(self) -> str:
        return CHANNELS[int(np.argmax(self.vector()))]

    @property
    def argmin(self) -> str:
        return CHANNELS[int(np.argmin(self.vector()))]

    def to_table(self) -> str:
        rows = ["channel\tweight\tx\ty"]
        for ch in CHANNELS:
            x, y = self.coordinates[ch]
            rows.append(f"{ch}\t{self.weights[ch]!r}\t{x!r}\t{y!r}")
        return "\n".join(rows) + "\n"

    def to_svg(self, title: str = "channel attention", size: int = 420) -> str:
        v = self.vector()
        lo, hi = float(v.min()), float(v.max())
        span = hi - lo
        c = size / 2
        r = size * 0.4
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 50}" '
            f'viewBox="0 0 {size} {size + 50}" font-family="sans-serif">',
            f'<title>{title}</title>',
            f'<polygon points="{c - 14:.1f},{c - r + 2:.1f} {c:.1f},{c - r - 18:.1f} {c + 14:.1f},{c - r + 2:.1f}" '
            'fill="white" stroke="black" stroke-width="2"/>',
            f'<ellipse cx="{c - r - 6:.1f}" cy="{c:.1f}" rx="9" ry="26" fill="white" stroke="black" stroke-width="2"/>',
            f'<ellipse cx="{c + r + 6:.1f}" cy="{c:.1f}" rx="9" ry="26" fill="white" stroke="black" stroke-width="2"/>',
            f'<circle cx="{c:.1f}" cy="{c:.1f}" r="{r:.1f}" fill="white" stroke="black" stroke-width="2"/>',
        ]
        for ch in CHANNELS:
            x, y = self.coordinates[ch]
            u = 0.5 if span == 0 else (self.weights[ch] - lo) / span
            px, py = c + x * r, c - y * r
            out.append(
                f'<circle cx="{px:.1f}" cy="{py:.1f}" r="15" fill="{weight_color(u)}" stroke="#333">'
                f"<title>{ch}: {self.weights[ch]:.4f}</title></circle>"
            )
            out.append(f'<text x="{px:.1f}" y="{py + 4:.1f}" font-size="10" text-anchor="middle">{ch}</text>')
        # colour bar
        x0, y0, w = size * 0.15, size + 12, size * 0.7
        steps = 20
        for k in range(steps):
            out.append(
                f'<rect x="{x0 + k * w / steps:.1f}" y="{y0:.1f}" width="{w / steps + 0.5:.1f}" height="12" '
                f'fill="{weight_color(k / (steps - 1))}"/>'
            )
        out.append(f'<text x="{x0:.1f}" y="{y0 + 28:.1f}" font-size="11" text-anchor="middle">{lo:.3f}</text>')
        out.append(f'<text x="{x0 + w:.1f}" y="{y0 + 28:.1f}" font-size="11" text-anchor="middle">{hi:.3f}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def parse_topography_table(text: str) -> TopographyMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t")[:2] != ["channel", "weight"]:
        raise ValueError("not a topography table")
    weights, coords = {}, {}
    for ln in lines[1:]:
        ch, w, x, y = ln.split("\t")
        weights[ch] = float(w)
        coords[ch] = (float(x), float(y))
    return TopographyMap(weights, coords)


def export_topography(
    a_tt,
    path_prefix: str | Path | None = None,
    coordinates: Mapping[str, tuple[float, float]] = COORDINATES,
    title: str = "channel attention",
) -> TopographyMap:
    """Build the channel -> weight map and optionally write ``.tsv`` and ``.svg`` files."""
    a = np.asarray(a_tt, dtype=np.float64).ravel()
    if a.size != N_CHANNELS:
        raise ValueError(f"attention vector has {a.size} entries, expected {N_CHANNELS}")
    if not np.all(np.isfinite(a)):
        raise ValueError("attention vector has non-finite entries")
    topo = TopographyMap({ch: float(w) for ch, w in zip(CHANNELS, a)}, dict(coordinates))
    if path_prefix is not None:
        prefix = Path(path_prefix)
        prefix.with_suffix(".tsv").write_text(topo.to_table())
        prefix.with_suffix(".svg").write_text(topo.to_svg(title))
    return topo


def subject_attention(attention: np.ndarray) -> np.ndarray:
    """Mean attention vector over a subject's windows, ``[n, 22] -> [22]``."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 2 or attention.shape[0] == 0:
        raise ValueError(f"expected a non-empty [n, {N_CHANNELS}] array, got {attention.shape}")
    return attention.mean(axis=0)


def aggregate_table(accuracies: Mapping[int, float | None]) -> str:
    """Per-subject accuracy row plus the unweighted mean, tab separated."""
    subs = sorted(accuracies)
    vals = [accuracies[s] for s in subs]
    valid = [v for v in vals if v is not None]
    mean = sum(valid) / len(valid) if valid else math.nan
    head = "\t".join(["method"] + [str(s) for s in subs] + ["average"])
    row = "\t".join(["ours"] + [f"{v:.3f}" if v is not None else "-" for v in vals] + [f"{mean:.3f}"])
    return head + "\n" + row + "\n"
