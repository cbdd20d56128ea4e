"""Segmentation metrics: IoU, gIoU/cIoU, region similarity J, boundary F.

Boundary extraction is mask XOR its 1-step 4-connected erosion (pixels
outside the image count as background), match tolerance is a city-block
dilation of radius ceil(0.008 * image diagonal), and empty-mask conventions
are pinned: both boundaries empty -> 1.0, exactly one empty -> 0.0.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

BOUNDARY_TOL_FACTOR = 0.008

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _as_binary(mask: np.ndarray, name: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1, False, True)).all():
        raise ValueError(f"{name} must be binary")
    return mask.astype(bool)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; both-empty convention is 1.0."""
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def giou_ciou(pairs: list[tuple[np.ndarray, np.ndarray]]) -> tuple[float, float]:
    """gIoU: mean of per-pair IoUs. cIoU: cumulative intersection over
    cumulative union (1.0 when the cumulative union is empty)."""
    if not pairs:
        raise ValueError("need at least one (pred, gt) pair")
    inters, unions, ious = [], [], []
    for pred, gt in pairs:
        pred = _as_binary(pred, "pred")
        gt = _as_binary(gt, "gt")
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
        inters.append(int(np.logical_and(pred, gt).sum()))
        unions.append(int(np.logical_or(pred, gt).sum()))
        ious.append(iou(pred, gt))
    total_union = sum(unions)
    ciou = 1.0 if total_union == 0 else sum(inters) / total_union
    return float(np.mean(ious)), float(ciou)


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """mask XOR erode(mask): 1-step 4-connected erosion, border as background."""
    mask = _as_binary(mask, "mask")
    eroded = ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)
    return mask & ~eroded


def boundary_tolerance(shape: tuple[int, int],
                       tol_factor: float = BOUNDARY_TOL_FACTOR) -> int:
    H, W = shape
    return math.ceil(tol_factor * math.sqrt(H * H + W * W))


def boundary_f_frame(pred: np.ndarray, gt: np.ndarray,
                     tol_factor: float = BOUNDARY_TOL_FACTOR) -> float:
    """Boundary F-measure for one frame."""
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    bp = mask_boundary(pred)
    bg = mask_boundary(gt)
    if not bp.any() and not bg.any():
        return 1.0
    if not bp.any() or not bg.any():
        return 0.0
    r = boundary_tolerance(pred.shape, tol_factor)
    dg = ndimage.binary_dilation(bg, structure=_CROSS, iterations=r) if r else bg
    dp = ndimage.binary_dilation(bp, structure=_CROSS, iterations=r) if r else bp
    precision = float((bp & dg).sum() / bp.sum())
    recall = float((bg & dp).sum() / bg.sum())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _check_sets(pred_masks: np.ndarray, gt_masks: np.ndarray) -> None:
    if pred_masks.shape != gt_masks.shape:
        raise ValueError(
            f"shape mismatch: pred {pred_masks.shape} vs gt {gt_masks.shape}"
        )
    if pred_masks.ndim != 3:
        raise ValueError(f"expected (T,H,W) mask stacks, got {pred_masks.shape}")


def region_similarity_J(pred_masks: np.ndarray, gt_masks: np.ndarray) -> float:
    """Mean per-frame IoU for one video."""
    _check_sets(pred_masks, gt_masks)
    return float(
        np.mean([iou(p, g) for p, g in zip(pred_masks, gt_masks)])
    )


def contour_accuracy_F(pred_masks: np.ndarray, gt_masks: np.ndarray,
                       tol_factor: float = BOUNDARY_TOL_FACTOR) -> float:
    """Mean per-frame boundary F for one video."""
    _check_sets(pred_masks, gt_masks)
    return float(
        np.mean([boundary_f_frame(p, g, tol_factor)
                 for p, g in zip(pred_masks, gt_masks)])
    )
