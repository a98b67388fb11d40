"""Evaluation metrics: pixel confusion / mIoU, detection mAP50, DG mean, and
relative performance under domain shift (rPD).

ConfusionMatrix accumulation is additive, so per-image matrices computed in
parallel reduce to the same totals as any sequential pass.
"""

import numpy as np

from . import kernels
from .datagen import IGNORE_VALUE


class ConfusionMatrix:
    """S x S pixel counts, counts[gt, pred], gt == 255 ignored."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, pred, gt):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
        p = pred.reshape(-1).astype(np.int64)
        g = gt.reshape(-1).astype(np.int64)
        if p.size and p.max() >= self.num_classes:
            raise ValueError("prediction class id out of range")
        kernels.confusion_update(self.counts, p, g, IGNORE_VALUE)
        return self

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("class count mismatch")
        out = ConfusionMatrix(self.num_classes)
        out.counts = self.counts + other.counts
        return out


def accumulate_confusion(pred, gt, num_classes):
    """One-shot confusion matrix for a (pred, gt) mask pair."""
    return ConfusionMatrix(num_classes).add(pred, gt)


def miou(cm):
    """Per-class IoU and their mean; classes that never occur are excluded."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    if not present.any():
        raise ValueError("confusion matrix is empty")
    iou = np.full(cm.num_classes, np.nan)
    iou[present] = tp[present] / denom[present]
    return iou, float(iou[present].mean())


def box_iou_cxcywh(a, b):
    """IoU of two (cx, cy, w, h) boxes."""
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def _ap_from_flags(flags, scores, n_gt):
    """All-point interpolated AP from per-prediction TP flags."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    tp = np.asarray(flags, dtype=np.float64)[order]
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, tp.size + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    # precision envelope, integrated over recall steps
    ap = 0.0
    prev_r = 0.0
    for i in range(tp.size):
        if tp[i] > 0:
            p_here = precision[i:].max()
            ap += (recall[i] - prev_r) * p_here
            prev_r = recall[i]
    return ap


def map50(predictions, ground_truths, num_classes, iou_thresh=0.5):
    """Per-class AP and mAP at one IoU threshold.

    predictions: per image, list of (class, cx, cy, w, h, score).
    ground_truths: per image, list of (class, cx, cy, w, h).
    Score-sorted greedy matching, each gt matched at most once; classes with
    no ground truth anywhere are skipped. Class 0 (background) never counts.
    """
    if len(predictions) != len(ground_truths):
        raise ValueError("prediction/ground-truth image counts differ")
    per_class_ap = {}
    for cls in range(1, num_classes):
        flags = []
        scores = []
        n_gt = 0
        for preds, gts in zip(predictions, ground_truths):
            gt_boxes = [g[1:5] for g in gts if g[0] == cls]
            n_gt += len(gt_boxes)
            matched = [False] * len(gt_boxes)
            cls_preds = sorted((p for p in preds if p[0] == cls),
                               key=lambda p: -p[5])
            for p in cls_preds:
                best_iou = 0.0
                best_j = -1
                for j, g in enumerate(gt_boxes):
                    iou = box_iou_cxcywh(p[1:5], g)
                    if iou > best_iou:
                        best_iou = iou
                        best_j = j
                ok = best_iou >= iou_thresh and best_j >= 0 and not matched[best_j]
                if ok:
                    matched[best_j] = True
                flags.append(1.0 if ok else 0.0)
                scores.append(p[5])
        if n_gt == 0:
            continue
        per_class_ap[cls] = _ap_from_flags(flags, scores, n_gt) if scores else 0.0
    if not per_class_ap:
        raise ValueError("no ground-truth instances in any class")
    return per_class_ap, float(np.mean(list(per_class_ap.values())))


def dg_mean(target_values):
    """Arithmetic mean of the metric over the unseen target domains."""
    vals = list(target_values)
    if not vals:
        raise ValueError("dg_mean needs at least one target value")
    return float(np.mean(vals))


def rpd(source_value, target_values):
    """Relative performance under domain shift, in percent:
    mean(target metric) / source oracle metric * 100."""
    targets = list(target_values)
    if source_value <= 0:
        raise ValueError("source metric must be > 0")
    if not targets:
        raise ValueError("rpd needs at least one target value")
    return float(np.mean(targets)) / float(source_value) * 100.0
