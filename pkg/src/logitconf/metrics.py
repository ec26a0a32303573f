"""Calibration and segmentation metrics.

ACE here is the unweighted mean of ``|mean confidence - accuracy|`` over the
non-empty bins; ECE weights the same gaps by bin population.
"""

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SCHEMES = ("equal-width", "equal-mass")


@dataclass(frozen=True)
class BinStats:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float

    @property
    def gap(self):
        return abs(self.mean_confidence - self.accuracy)


@dataclass(frozen=True)
class CalibrationReport:
    scheme: str
    requested_bins: int
    bins: tuple
    ace: float
    ece: float
    total_samples: int

    def to_dict(self):
        d = asdict(self)
        d["bins"] = [asdict(b) for b in self.bins]
        return d


def bin_predictions(confidences, correct, n_bins=10, scheme="equal-width"):
    """Group samples into calibration bins, dropping empty ones.

    ``equal-width`` uses right-closed intervals ``(k/M, (k+1)/M]`` with 0.0 in
    the first bin. ``equal-mass`` sorts by confidence (stable, so ties keep
    input order) and splits into ``n_bins`` groups whose sizes differ by at
    most one.
    """
    conf = np.asarray(confidences, dtype=np.float64).reshape(-1)
    hit = np.asarray(correct, dtype=bool).reshape(-1)
    if conf.size == 0:
        raise ValueError("cannot bin an empty set of predictions")
    if conf.shape != hit.shape:
        raise ValueError(f"confidences and correctness differ in length: {conf.size} vs {hit.size}")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown binning scheme {scheme!r}")

    bins = []
    if scheme == "equal-width":
        edges = np.arange(n_bins + 1) / n_bins
        idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
        for k in range(n_bins):
            members = idx == k
            n = int(members.sum())
            if n:
                bins.append(BinStats(float(edges[k]), float(edges[k + 1]), n,
                                     float(conf[members].mean()), float(hit[members].mean())))
    else:
        order = np.argsort(conf, kind="stable")
        for group in np.array_split(order, n_bins):
            if group.size:
                c = conf[group]
                bins.append(BinStats(float(c.min()), float(c.max()), int(group.size),
                                     float(c.mean()), float(hit[group].mean())))
    return tuple(bins)


def ace(bins):
    if not bins:
        raise ValueError("ACE needs at least one non-empty bin")
    return float(np.mean([b.gap for b in bins]))


def ece(bins, total=None):
    if not bins:
        raise ValueError("ECE needs at least one non-empty bin")
    total = sum(b.count for b in bins) if total is None else total
    return float(sum(b.count / total * b.gap for b in bins))


def calibration_report(confidences, correct, n_bins=10, scheme="equal-width"):
    bins = bin_predictions(confidences, correct, n_bins, scheme)
    total = sum(b.count for b in bins)
    return CalibrationReport(scheme, n_bins, bins, ace(bins), ece(bins, total), total)


ROW_FIELDS = ("lower", "upper", "count", "mean_confidence", "accuracy")


def reliability_rows(bins):
    """One row per non-empty bin, ordered by lower bound."""
    return [asdict(b) for b in sorted(bins, key=lambda b: b.lower)]


def render_reliability_svg(rows, path=None, title="Reliability diagram"):
    """Bar chart of per-bin accuracy over confidence with the identity diagonal.

    Output is a deterministic function of ``rows``; returns the SVG text and
    writes it to ``path`` when given.
    """
    size, pad = 400, 50
    plot = size - 2 * pad

    def sx(v):
        return pad + v * plot

    def sy(v):
        return size - pad - v * plot

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<text x="{size / 2:.1f}" y="{pad / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for r in rows:
        x0, x1 = sx(r["lower"]), sx(r["upper"])
        top = sy(r["accuracy"])
        out.append(f'<rect class="bin" x="{x0:.3f}" y="{top:.3f}" width="{x1 - x0:.3f}" '
                   f'height="{sy(0) - top:.3f}" fill="#4c78a8" stroke="#1f3b5a" stroke-width="0.5"/>')
        out.append(f'<circle class="conf" cx="{sx(r["mean_confidence"]):.3f}" '
                   f'cy="{sy(r["mean_confidence"]):.3f}" r="2.5" fill="#e45756"/>')
    out.append(f'<line class="diagonal" x1="{sx(0):.3f}" y1="{sy(0):.3f}" x2="{sx(1):.3f}" '
               f'y2="{sy(1):.3f}" stroke="#888888" stroke-dasharray="4,3"/>')
    out.append(f'<line class="axis" x1="{sx(0):.3f}" y1="{sy(0):.3f}" x2="{sx(1):.3f}" y2="{sy(0):.3f}" '
               f'stroke="black"/>')
    out.append(f'<line class="axis" x1="{sx(0):.3f}" y1="{sy(0):.3f}" x2="{sx(0):.3f}" y2="{sy(1):.3f}" '
               f'stroke="black"/>')
    for k in range(6):
        v = k / 5
        out.append(f'<text x="{sx(v):.3f}" y="{sy(0) + 16:.3f}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{v:.1f}</text>')
        out.append(f'<text x="{sx(0) - 6:.3f}" y="{sy(v) + 3:.3f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{v:.1f}</text>')
    out.append(f'<text x="{size / 2:.1f}" y="{size - 12:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">confidence</text>')
    out.append(f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 14 {size / 2:.1f})">accuracy</text>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(svg, encoding="utf-8")
    return svg


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray
    ignore_label: int | None = None

    @property
    def classes(self):
        return self.counts.shape[0]

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts, self.ignore_label)

    def accuracy(self):
        return float(np.trace(self.counts) / self.counts.sum())


def scored_mask(labels, ignore_label=None):
    labels = np.asarray(labels)
    if ignore_label is None:
        return np.ones(labels.shape, dtype=bool)
    return labels != ignore_label


def accumulate_confusion(pred, labels, classes, ignore_label=None):
    pred = np.asarray(pred).reshape(-1)
    labels = np.asarray(labels)
    if labels.size != pred.size:
        raise ValueError(f"prediction/label shape mismatch: {np.shape(pred)} vs {labels.shape}")
    keep = scored_mask(labels, ignore_label).reshape(-1)
    p = pred[keep].astype(np.int64)
    t = labels.reshape(-1)[keep].astype(np.int64)
    if p.size and (p.min() < 0 or p.max() >= classes):
        raise ValueError("prediction outside class range")
    if t.size and (t.min() < 0 or t.max() >= classes):
        raise ValueError("label outside class range")
    counts = np.bincount(t * classes + p, minlength=classes * classes).reshape(classes, classes)
    return ConfusionMatrix(counts, ignore_label)


def miou(cm):
    """Per-class IoU (NaN where a class is absent from truth and prediction) and their mean."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - tp
    present = union > 0
    if not present.any():
        raise ValueError("mIoU undefined: no class appears in labels or predictions")
    iou = np.full(cm.classes, np.nan)
    iou[present] = tp[present] / union[present]
    return iou, float(iou[present].mean())
