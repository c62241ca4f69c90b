"""Numpy implementations of the pixel kernels.

Fallback backend used when the compiled extension is unavailable. All
functions take C-contiguous uint8 grids of shape (height, width) with
values in {0, 1}; depth maps are float64 of the same shape.
"""

from __future__ import annotations

import numpy as np


def iou_counts(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    """(intersection, union) pixel counts of two binary grids."""
    a = a.astype(bool, copy=False)
    b = b.astype(bool, copy=False)
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a | b))


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Set pixels with a 4-neighbor outside the mask (grid border counts)."""
    m = mask.astype(bool, copy=False)
    padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return (m & ~interior).astype(np.uint8)


def boundary_match_counts(
    pred_boundary: np.ndarray, gt_boundary: np.ndarray, radius: int
) -> tuple[int, int, int, int]:
    """Chebyshev-tolerance boundary matching.

    Returns (pred matched, pred total, gt matched, gt total) where a pixel
    matches when the other boundary has a set pixel within Chebyshev
    distance <= radius.
    """
    pb = pred_boundary.astype(bool, copy=False)
    gb = gt_boundary.astype(bool, copy=False)
    pred_total = int(np.count_nonzero(pb))
    gt_total = int(np.count_nonzero(gb))
    gb_dilated = _dilate_square(gb, radius)
    pb_dilated = _dilate_square(pb, radius)
    pred_matched = int(np.count_nonzero(pb & gb_dilated))
    gt_matched = int(np.count_nonzero(gb & pb_dilated))
    return pred_matched, pred_total, gt_matched, gt_total


def _dilate_square(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask
    h, w = mask.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    padded[radius : radius + h, radius : radius + w] = mask
    out = np.zeros_like(mask, dtype=bool)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def masked_depth_stats(
    mask: np.ndarray, depth: np.ndarray
) -> tuple[int, float, float, float, float]:
    """(count, mean, population std, min, max) of depth under the mask."""
    selected = depth[mask.astype(bool, copy=False)]
    count = int(selected.size)
    if count == 0:
        raise ValueError("mask selects no pixels")
    mean = float(selected.mean())
    std = float(np.sqrt(np.mean((selected - mean) ** 2)))
    return count, mean, std, float(selected.min()), float(selected.max())
