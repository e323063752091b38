"""Segmentation accuracy metrics: IoU and Dice coefficient.

Predictions are thresholded at 0.5; both metrics use the empty-mask
convention IoU = DSC = 1 when prediction and ground truth are both empty,
which keeps blank negatives stable. For batched inputs the per-sample
scores are averaged.
"""

from __future__ import annotations

import torch

__all__ = ["iou", "dsc"]


def _binarize(pred, gt, threshold):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if not torch.all((gt == 0) | (gt == 1)):
        raise ValueError("ground-truth mask must be binary {0, 1}")
    p = (pred > threshold).reshape(pred.shape[0], -1).to(torch.float64)
    g = (gt > 0.5).reshape(gt.shape[0], -1).to(torch.float64)
    return p, g


def iou(pred, gt, threshold=0.5):
    """Intersection over union after thresholding; empty union -> 1."""
    p, g = _binarize(pred, gt, threshold)
    inter = (p * g).sum(1)
    union = p.sum(1) + g.sum(1) - inter
    score = torch.where(union > 0, inter / union.clamp(min=1.0), torch.ones_like(union))
    return float(score.mean())


def dsc(pred, gt, threshold=0.5):
    """Dice coefficient 2|P & G| / (|P| + |G|); both empty -> 1."""
    p, g = _binarize(pred, gt, threshold)
    inter = (p * g).sum(1)
    total = p.sum(1) + g.sum(1)
    score = torch.where(total > 0, 2.0 * inter / total.clamp(min=1.0), torch.ones_like(total))
    return float(score.mean())
