"""Task metrics and their normalization to a [0, 1] performance score."""
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class LinkPerformance:
    raw_metric: float
    p: float
    skipped: int = 0


def accuracy(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean(np.argmax(pred, axis=1) == np.argmax(target, axis=1)))


def average_precision_11pt(scores, labels):
    """11-point interpolated AP for one class; labels are booleans."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(labels, dtype=bool)[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / hits.sum()
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        above = precision[recall >= r - 1e-12]
        ap += above.max() if above.size else 0.0
    return ap / 11.0


def mean_average_precision(pred, target, threshold=0.5):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(target, dtype=np.float64) >= threshold
    aps = [average_precision_11pt(pred[:, c], truth[:, c]) for c in range(truth.shape[1]) if truth[:, c].any()]
    if not aps:
        # no positives anywhere: perfect only if nothing is predicted positive
        return 1.0 if not np.any(pred >= threshold) else 0.0
    return float(np.mean(aps))


def mean_iou(pred, target):
    return float(np.mean(kernels.box_iou(pred, target)))


def mean_absolute_error(pred, target):
    return float(np.mean(np.abs(np.asarray(pred, np.float64) - np.asarray(target, np.float64))))


def counting_accuracy(pred, target, threshold=0.5):
    err = np.abs(np.asarray(pred, np.float64) - np.asarray(target, np.float64))
    return float(np.mean(err < threshold))


def word_error_rate(ref, hyp):
    """Edit distance over tokens divided by reference length."""
    if len(ref) == 0:
        raise ValueError("WER undefined for an empty reference")
    return kernels.edit_distance(ref, hyp) / len(ref)


def mean_wer(preds, targets):
    """Mean per-row WER plus the number of rows skipped for empty references."""
    rates, skipped, stray = [], 0, 0
    for hyp, ref in zip(preds, targets):
        if len(ref) == 0:
            skipped += 1
            stray += len(hyp) > 0
            continue
        rates.append(word_error_rate(ref, hyp))
    if not rates:
        return (1.0 if stray else 0.0), skipped
    return float(np.mean(rates)), skipped


def evaluate_performance(predictions, targets, metric, value_range=None):
    """Raw metric plus its [0, 1] normalization ``p``.

    ``value_range`` normalizes MAE when the metric does not carry its own range.
    """
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions vs {len(targets)} targets")
    if len(targets) == 0:
        raise ValueError("nothing to evaluate")
    name = metric.name
    if name == "WER":
        raw, skipped = mean_wer(predictions, targets)
        return LinkPerformance(raw, max(0.0, 1.0 - raw), skipped)
    pred = np.asarray(predictions, dtype=np.float64)
    target = np.asarray(targets, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if name == "accuracy":
        raw = accuracy(pred, target)
    elif name == "mAP":
        raw = mean_average_precision(pred, target)
    elif name == "IoU":
        raw = mean_iou(pred, target)
    elif name == "counting":
        raw = counting_accuracy(pred, target, metric.counting_threshold)
    elif name == "MAE":
        raw = mean_absolute_error(pred, target)
        r = metric.range or value_range or 1.0
        return LinkPerformance(raw, max(0.0, 1.0 - raw / r))
    else:
        raise ValueError(f"unknown metric {name!r}")
    return LinkPerformance(raw, min(1.0, max(0.0, raw)))
