"""Evaluation metrics and reporting.

The evaluation Hausdorff distance is the classical symmetric max-min over
the sampled vertex sets — distinct from the sum-based training loss.  Per
class, scores average over the class's region instances.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import check_polygon, rasterize_polygon
from .masknet import REGION_CLASSES


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two polygon vertex sets (pixels).

    Distances are sqrt(dx*dx + dy*dy) so a scalar brute-force oracle using
    the same expression agrees bit-for-bit.
    """
    a = check_polygon(np.asarray(a, dtype=np.float64), min_points=1)
    b = check_polygon(np.asarray(b, dtype=np.float64), min_points=1)
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    d = np.sqrt(dx * dx + dy * dy)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = (a | b).sum()
    if union == 0:
        return 1.0
    return float((a & b).sum() / union)


def evaluate(annotator, samples, densify: int = 1) -> dict:
    """Score a fitted annotator on a dataset of synthetic samples.

    Returns per-class and overall mean Hausdorff distance (over the sampled
    polygon vertices; ``densify`` > 1 interpolates both polygons first),
    per-class mean IoU, the 8x8 classifier confusion matrix, and the same
    numbers for the unrefined (mask-contour-only) polygons.
    """
    per_class_hd = {name: [] for name in REGION_CLASSES}
    per_class_hd_initial = {name: [] for name in REGION_CLASSES}
    per_class_iou = {name: [] for name in REGION_CLASSES}
    confusion = np.zeros((len(REGION_CLASSES), len(REGION_CLASSES)), dtype=np.int64)

    for sample in samples:
        pred = annotator.predict(sample.image)
        gt_poly = sample.gt_polygon
        pred_poly = pred["polygon"]
        init_poly = pred["initial_polygon"]
        if densify > 1:
            from .contour_gcn import interpolate_contour

            gt_poly = interpolate_contour(gt_poly, densify).data
            pred_poly = interpolate_contour(pred_poly, densify).data
            init_poly = interpolate_contour(init_poly, densify).data
        name = sample.class_name
        per_class_hd[name].append(hausdorff_distance(pred_poly, gt_poly))
        per_class_hd_initial[name].append(hausdorff_distance(init_poly, gt_poly))
        h, w = sample.gt_mask.shape
        per_class_iou[name].append(iou(rasterize_polygon(pred["polygon"], h, w), sample.gt_mask))
        confusion[sample.class_index, pred["class_index"]] += 1

    def summarize(per_class):
        means = {
            name: float(np.mean(vals)) for name, vals in per_class.items() if vals
        }
        overall = float(np.mean([v for vals in per_class.values() for v in vals]))
        return means, overall

    hd_means, hd_overall = summarize(per_class_hd)
    hd0_means, hd0_overall = summarize(per_class_hd_initial)
    iou_means, iou_overall = summarize(per_class_iou)
    accuracy = float(np.trace(confusion) / max(confusion.sum(), 1))
    return {
        "count": sum(len(v) for v in per_class_hd.values()),
        "hd_per_class": hd_means,
        "hd_overall": hd_overall,
        "hd_initial_per_class": hd0_means,
        "hd_initial_overall": hd0_overall,
        "iou_per_class": iou_means,
        "iou_overall": iou_overall,
        "classifier_accuracy": accuracy,
        "confusion": confusion.tolist(),
    }


def write_report(report: dict, out_dir, stem: str = "evaluation") -> tuple[Path, Path]:
    """Emit the evaluation as <stem>.json and <stem>.csv (Table-style rows)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "overall", *REGION_CLASSES])
        for metric, overall_key, cls_key in (
            ("hd", "hd_overall", "hd_per_class"),
            ("hd_initial", "hd_initial_overall", "hd_initial_per_class"),
            ("iou", "iou_overall", "iou_per_class"),
        ):
            row = [metric, f"{report[overall_key]:.6f}"]
            for name in REGION_CLASSES:
                val = report[cls_key].get(name)
                row.append("" if val is None else f"{val:.6f}")
            writer.writerow(row)
        writer.writerow(["classifier_accuracy", f"{report['classifier_accuracy']:.6f}"])
    return json_path, csv_path


def write_confusion_csv(confusion, path) -> Path:
    """8x8 confusion matrix as CSV with class-name row/column headers."""
    path = Path(path)
    conf = np.asarray(confusion, dtype=np.int64)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["true\\pred", *REGION_CLASSES])
        for name, row in zip(REGION_CLASSES, conf):
            writer.writerow([name, *row.tolist()])
    return path
