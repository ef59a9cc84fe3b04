"""Overlap and boundary-distance metrics on integer label maps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from scaleformer.errors import ContractError

HD_OK = "ok"
HD_BOTH_EMPTY = "both_empty"
HD_ONE_EMPTY = "one_empty"


def _masks(pred, gt, class_id: int) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"label maps differ in shape: {pred.shape} vs {gt.shape}")
    return pred == class_id, gt == class_id


def dsc(pred, gt, class_id: int) -> float:
    a, b = _masks(pred, gt, class_id)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def iou(pred, gt, class_id: int) -> float:
    a, b = _masks(pred, gt, class_id)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour; outside the image is background."""
    m = np.pad(mask.astype(bool), 1, constant_values=False)
    inner = m[1:-1, 1:-1]
    interior = inner & m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    return inner & ~interior


@dataclass
class HausdorffResult:
    value: float
    status: str  # HD_OK, HD_BOTH_EMPTY or HD_ONE_EMPTY


def hausdorff_detail(pred, gt, class_id: int, percentile: float = 95.0, spacing: float = 1.0) -> HausdorffResult:
    """Percentile of the pooled directed boundary distances in both directions.

    percentile=100 is the classic symmetric Hausdorff distance. When exactly
    one mask is empty the image diagonal is returned with status "one_empty".
    """
    if not 0 < percentile <= 100:
        raise ContractError(f"percentile must lie in (0, 100], got {percentile}")
    a, b = _masks(pred, gt, class_id)
    has_a, has_b = a.any(), b.any()
    if not has_a and not has_b:
        return HausdorffResult(0.0, HD_BOTH_EMPTY)
    if has_a != has_b:
        H, W = a.shape
        return HausdorffResult(math.hypot(H, W) * spacing, HD_ONE_EMPTY)
    pa = np.argwhere(boundary(a)).astype(np.float64)
    pb = np.argwhere(boundary(b)).astype(np.float64)
    d = cdist(pa, pb)
    directed = np.concatenate([d.min(axis=1), d.min(axis=0)]) * spacing
    if percentile == 100:
        return HausdorffResult(float(directed.max()), HD_OK)
    return HausdorffResult(float(np.percentile(directed, percentile)), HD_OK)


def hausdorff(pred, gt, class_id: int, percentile: float = 95.0, spacing: float = 1.0) -> float:
    return hausdorff_detail(pred, gt, class_id, percentile, spacing).value


# reports ------------------------------------------------------------------------------

REPORT_COLUMNS = ["sample", "class", "dsc", "iou", "hd", "hd_status"]


@dataclass
class MetricRow:
    sample: str
    class_id: int
    dsc: float
    iou: float
    hd: float
    hd_status: str


def evaluate(preds, gts, num_classes: int, names=None, percentile: float = 95.0, spacing: float = 1.0) -> list[MetricRow]:
    """One row per (sample, class) including background."""
    names = [str(i) for i in range(len(preds))] if names is None else list(names)
    rows = []
    for name, p, g in zip(names, preds, gts):
        for c in range(num_classes):
            hd = hausdorff_detail(p, g, c, percentile, spacing)
            rows.append(MetricRow(name, c, dsc(p, g, c), iou(p, g, c), hd.value, hd.status))
    return rows


def aggregate(rows: list[MetricRow], num_classes: int) -> list[dict]:
    """Per-class means over samples, then the mean over foreground classes.

    HD means skip rows whose distance is a one-empty sentinel; the skipped
    count is reported in ``hd_status`` as ``sentinel=N``.
    """
    out = []
    per_class = []
    for c in range(num_classes):
        sel = [r for r in rows if r.class_id == c]
        if not sel:
            continue
        valid = [r.hd for r in sel if r.hd_status != HD_ONE_EMPTY]
        entry = {
            "sample": "mean",
            "class": str(c),
            "dsc": float(np.mean([r.dsc for r in sel])),
            "iou": float(np.mean([r.iou for r in sel])),
            "hd": float(np.mean(valid)) if valid else float("nan"),
            "hd_status": f"sentinel={len(sel) - len(valid)}",
        }
        out.append(entry)
        if c > 0:
            per_class.append((entry, len(sel) - len(valid)))
    if per_class:
        hds = [e["hd"] for e, _ in per_class if not math.isnan(e["hd"])]
        out.append(
            {
                "sample": "mean",
                "class": "foreground",
                "dsc": float(np.mean([e["dsc"] for e, _ in per_class])),
                "iou": float(np.mean([e["iou"] for e, _ in per_class])),
                "hd": float(np.mean(hds)) if hds else float("nan"),
                "hd_status": f"sentinel={sum(n for _, n in per_class)}",
            }
        )
    return out


def mean_foreground_dsc(preds, gts, num_classes: int) -> float:
    return float(np.mean([dsc(p, g, c) for p, g in zip(preds, gts) for c in range(1, num_classes)]))


def report_csv(rows: list[MetricRow], num_classes: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r.sample, r.class_id, f"{r.dsc:.6f}", f"{r.iou:.6f}", f"{r.hd:.6f}", r.hd_status])
    for a in aggregate(rows, num_classes):
        w.writerow([a["sample"], a["class"], f"{a['dsc']:.6f}", f"{a['iou']:.6f}", f"{a['hd']:.6f}", a["hd_status"]])
    return buf.getvalue()
