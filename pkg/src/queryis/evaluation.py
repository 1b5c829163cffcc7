"""Mask AP over IoU thresholds 0.50:0.95 and AP50."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .heads import InstanceResult
from .scene import GroundTruth

THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def match_greedy(preds: Sequence[InstanceResult], gt: GroundTruth, iou_threshold: float) -> list[bool]:
    """TP/FP per prediction, processed in the given (score-descending) order."""
    taken = np.zeros(gt.count, dtype=bool)
    labels = []
    for r in preds:
        best, best_iou = -1, -1.0
        for g in range(gt.count):
            if taken[g] or gt.classes[g] != r.label:
                continue
            iou = mask_iou(r.mask, gt.masks[g])
            if iou > best_iou:
                best, best_iou = g, iou
        if best >= 0 and best_iou >= iou_threshold:
            taken[best] = True
            labels.append(True)
        else:
            labels.append(False)
    return labels


def pr_curve(labels, scores, num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(labels, dtype=bool)[order]
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / num_gt if num_gt else np.zeros(len(tp))
    return precision, recall


def average_precision(labels, scores, num_gt: int) -> float | None:
    """All-point interpolated AP; ``None`` when there is nothing to score."""
    if num_gt == 0:
        return None if len(labels) == 0 else 0.0
    if len(labels) == 0:
        return 0.0
    precision, recall = pr_curve(labels, scores, num_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float((steps * envelope).sum())


@dataclass
class EvalReport:
    per_class: dict[int, dict[str, float]]
    mean_ap: float
    mean_ap50: float
    gt_counts: dict[int, int]
    pred_counts: dict[int, int]
    curves: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict[str, float]:
        out = {}
        for c in sorted(self.per_class):
            out[f"metric.{c}.AP"] = self.per_class[c]["AP"]
            out[f"metric.{c}.AP50"] = self.per_class[c]["AP50"]
        out["metric.mean.AP"] = self.mean_ap
        out["metric.mean.AP50"] = self.mean_ap50
        return out


def evaluate(
    results: Sequence[Sequence[InstanceResult]],
    gts: Sequence[GroundTruth],
    num_classes: int,
    thresholds: Sequence[float] = THRESHOLDS,
) -> EvalReport:
    if len(results) != len(gts):
        raise ValueError(f"{len(results)} result lists for {len(gts)} scenes")
    per_class, gt_counts, pred_counts, curves = {}, {}, {}, {}
    for c in range(num_classes):
        num_gt = int(sum((gt.classes == c).sum() for gt in gts))
        preds = [[r for r in res if r.label == c] for res in results]
        n_pred = sum(len(p) for p in preds)
        gt_counts[c], pred_counts[c] = num_gt, n_pred
        if num_gt == 0:
            continue
        aps = {}
        for t in thresholds:
            labels, scores = [], []
            for p, gt in zip(preds, gts):
                labels += match_greedy(p, gt, t)
                scores += [r.score for r in p]
            aps[t] = average_precision(labels, scores, num_gt)
            if t == 0.5:
                curves[c] = pr_curve(labels, scores, num_gt)
        per_class[c] = {"AP": float(np.mean(list(aps.values()))), "AP50": aps.get(0.5, float("nan"))}
    if per_class:
        mean_ap = float(np.mean([v["AP"] for v in per_class.values()]))
        mean_ap50 = float(np.mean([v["AP50"] for v in per_class.values()]))
    else:
        mean_ap = mean_ap50 = 0.0
    return EvalReport(per_class, mean_ap, mean_ap50, gt_counts, pred_counts, curves)


def write_report(report: EvalReport, path) -> None:
    lines = [f"{k} = {v!r}" for k, v in report.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> dict[str, float]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = float(v)
    return out
