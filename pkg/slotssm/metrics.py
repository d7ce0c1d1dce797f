"""Segmentation, prediction and color metrics.

Mask arrays are integer label maps [..., H, W]. Ground-truth label 0 is background;
predicted labels are slot indices. Rollout MSE is measured on images in [0, 1].
"""
from __future__ import annotations

from typing import Dict

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb

from .errors import ShapeError
from .palette import BACKGROUND, WHITE


def contingency_table(gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Counts of pixels per (gt label, pred label) pair over the flattened inputs."""
    _, gt_ids = np.unique(gt, return_inverse=True)
    _, pred_ids = np.unique(pred, return_inverse=True)
    table = np.zeros((gt_ids.max(initial=-1) + 1, pred_ids.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (gt_ids.ravel(), pred_ids.ravel()), 1)
    return table


def ari_from_table(table: np.ndarray) -> float:
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    n = a.sum()
    comb_a = comb(a, 2).sum()
    comb_b = comb(b, 2).sum()
    comb_n = comb(n, 2)
    comb_table = comb(table, 2).sum()
    expected = comb_a * comb_b / comb_n if comb_n else 0.0
    denom = 0.5 * (comb_a + comb_b) - expected
    if denom == 0:
        # both partitions all-singletons or both one cluster: identical
        return 1.0
    return float((comb_table - expected) / denom)


def adjusted_rand_index(gt: np.ndarray, pred: np.ndarray) -> float:
    return ari_from_table(contingency_table(np.asarray(gt), np.asarray(pred)))


def _check_masks(op: str, pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim < 2:
        raise ShapeError(op, pred.shape, gt.shape, detail="masks must share a [..., H, W] shape")


def fg_ari(pred_masks: np.ndarray, gt_masks: np.ndarray, background: int = 0) -> float:
    """ARI over foreground pixels per frame, averaged over frames; a frame with no foreground scores 1."""
    pred = np.asarray(pred_masks)
    gt = np.asarray(gt_masks)
    _check_masks("fg_ari", pred, gt)
    frames_pred = pred.reshape((-1,) + pred.shape[-2:])
    frames_gt = gt.reshape((-1,) + gt.shape[-2:])
    scores = []
    for p, g in zip(frames_pred, frames_gt):
        fg = g != background
        scores.append(1.0 if not fg.any() else adjusted_rand_index(g[fg], p[fg]))
    return float(np.mean(scores))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def iou_matrix(pred_masks: np.ndarray, gt_masks: np.ndarray, background: int = 0) -> np.ndarray:
    """IoU between each ground-truth object and each predicted label, over the whole sequence."""
    objects = [label for label in np.unique(gt_masks) if label != background]
    slots = list(np.unique(pred_masks))
    table = np.zeros((len(objects), len(slots)))
    for i, obj in enumerate(objects):
        gt = gt_masks == obj
        for j, slot in enumerate(slots):
            table[i, j] = iou(pred_masks == slot, gt)
    return table


def best_matching(table: np.ndarray) -> float:
    """Largest total IoU over one-to-one object -> slot matchings; objects left over count 0."""
    objects, slots = table.shape
    if objects == 0 or slots == 0:
        return 0.0
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum())


def miou(pred_masks: np.ndarray, gt_masks: np.ndarray, background: int = 0) -> float:
    """Mean IoU of ground-truth objects under the best one-to-one slot matching; no objects scores 1."""
    pred = np.asarray(pred_masks)
    gt = np.asarray(gt_masks)
    _check_masks("miou", pred, gt)
    table = iou_matrix(pred, gt, background)
    if table.shape[0] == 0:
        return 1.0
    return best_matching(table) / table.shape[0]


def rollout_mse_curve(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """[B, W, H, W_, C] predictions and targets in [0, 1] -> per-step MSE [W]."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim < 3:
        raise ShapeError("rollout_mse", pred.shape, target.shape)
    err = np.square(pred - target)
    axes = (0,) + tuple(range(2, err.ndim))
    return err.mean(axis=axes)


def ball_colors_from_classes(classes: np.ndarray, target_mask: np.ndarray, num_balls: int) -> np.ndarray:
    """Majority class over each ball's visible region; -1 for a fully hidden ball."""
    out = np.full(num_balls, -1, dtype=np.int64)
    for ball in range(num_balls):
        region = classes[target_mask == ball + 1]
        if region.size:
            out[ball] = int(np.argmax(np.bincount(region.ravel(), minlength=WHITE + 1)))
    return out


def color_accuracy(classes: np.ndarray, target_masks: np.ndarray, finals: np.ndarray) -> float:
    """Fraction of visible balls whose majority predicted class equals the true final color.

    classes [B, H, W], target_masks [B, H, W], finals [B, n].
    """
    correct = 0
    total = 0
    for cls, mask, truth in zip(classes, target_masks, finals):
        voted = ball_colors_from_classes(cls, mask, len(truth))
        visible = voted >= 0
        correct += int((voted[visible] == truth[visible]).sum())
        total += int(visible.sum())
    return correct / total if total else 0.0


def white_baseline_accuracy(target_masks: np.ndarray, finals: np.ndarray) -> float:
    """Accuracy of always predicting white: the share of visible balls whose final color is white."""
    classes = np.where(np.asarray(target_masks) > 0, WHITE, BACKGROUND)
    return color_accuracy(classes, target_masks, finals)


def geometry_iou(classes: np.ndarray, target_masks: np.ndarray) -> float:
    """IoU of predicted non-background pixels against the true ball silhouettes, ignoring color."""
    return iou(np.asarray(classes) != BACKGROUND, np.asarray(target_masks) > 0)


def segmentation_scores(pred_masks: np.ndarray, gt_masks: np.ndarray) -> Dict[str, float]:
    """FG-ARI and mIoU per episode [B, T, H, W], averaged over the batch."""
    ari = [fg_ari(p, g) for p, g in zip(pred_masks, gt_masks)]
    ious = [miou(p, g) for p, g in zip(pred_masks, gt_masks)]
    return {"fg_ari": float(np.mean(ari)), "miou": float(np.mean(ious))}
