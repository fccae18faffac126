"""Overlap and boundary-distance metrics for binary segmentations."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .capnet import REGIONS
from .levelset import as_mask, boundary_map

METRICS = ("dice", "sensitivity", "specificity", "hausdorff")
AGGREGATES = ("mean", "std", "median", "q25", "q75")


def _pair(a, b):
    a, b = as_mask(a).astype(bool), as_mask(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b):
    """2|A & B| / (|A| + |B|); two empty masks score 1."""
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def sensitivity(pred, truth):
    pred, truth = _pair(pred, truth)
    tp = int((pred & truth).sum())
    fn = int((~pred & truth).sum())
    return 1.0 if tp + fn == 0 else tp / (tp + fn)


def specificity(pred, truth):
    pred, truth = _pair(pred, truth)
    tn = int((~pred & ~truth).sum())
    fp = int((pred & ~truth).sum())
    return 1.0 if tn + fp == 0 else tn / (tn + fp)


def hausdorff(a, b, variant="max"):
    """Symmetric Hausdorff distance between mask boundaries, in pixels.

    ``variant="max"`` is the classical distance; ``"p95"`` takes the 95th
    percentile of the pooled directed nearest-boundary distances. Returns
    ``None`` when either mask is empty.
    """
    a, b = _pair(a, b)
    if variant not in ("max", "p95"):
        raise ValueError(f"unknown Hausdorff variant {variant!r}")
    if not a.any() or not b.any():
        return None
    pa = np.argwhere(boundary_map(a)).astype(np.float64)
    pb = np.argwhere(boundary_map(b)).astype(np.float64)
    d = cdist(pa, pb)
    d_ab = d.min(axis=1)
    d_ba = d.min(axis=0)
    if variant == "max":
        return float(max(d_ab.max(), d_ba.max()))
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))


def aggregate(values):
    """Mean, population std, median and quartiles (linear interpolation)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {k: float("nan") for k in AGGREGATES}
    return {
        "mean": float(v.mean()),
        "std": float(v.std()),
        "median": float(np.median(v)),
        "q25": float(np.percentile(v, 25)),
        "q75": float(np.percentile(v, 75)),
    }


@dataclass
class MetricReport:
    per_sample: list  # one {region: {metric: value}} dict per sample
    summary: dict = field(default_factory=dict)  # region -> metric -> aggregate -> value
    excluded: dict = field(default_factory=dict)  # region -> count of undefined Hausdorff

    def lines(self):
        out = []
        for region in REGIONS:
            for metric in METRICS:
                agg = self.summary[region][metric]
                stats = " ".join(f"{k}={agg[k]:.4f}" for k in AGGREGATES)
                out.append(f"{region} {metric} {stats}")
            out.append(f"{region} hausdorff_excluded={self.excluded[region]}")
        return out

    def to_dict(self):
        return {"per_sample": self.per_sample, "summary": self.summary, "excluded": self.excluded}


def region_metrics(pred, truth, variant="max"):
    return {
        "dice": dice(pred, truth),
        "sensitivity": sensitivity(pred, truth),
        "specificity": specificity(pred, truth),
        "hausdorff": hausdorff(pred, truth, variant),
    }


def evaluate_dataset(preds, truths, variant="max"):
    """Per-region metrics for paired predictions and samples, plus aggregates.

    ``preds`` items may be ``HierarchyResult`` objects or plain
    ``(WT, TC, EC)`` mask triples; ``truths`` items are samples or triples.
    """
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} ground truths")
    per_sample = []
    for pred, truth in zip(preds, truths):
        pm = getattr(pred, "masks", pred)
        tm = getattr(truth, "labels", truth)
        per_sample.append(
            {r: region_metrics(p, t, variant) for r, p, t in zip(REGIONS, pm, tm)}
        )
    summary, excluded = {}, {}
    for region in REGIONS:
        summary[region] = {}
        for metric in METRICS:
            vals = [s[region][metric] for s in per_sample if s[region][metric] is not None]
            summary[region][metric] = aggregate(vals)
        excluded[region] = sum(s[region]["hausdorff"] is None for s in per_sample)
    return MetricReport(per_sample, summary, excluded)
