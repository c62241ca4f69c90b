# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pixel kernels: IoU counting, boundary extraction and matching,
masked depth statistics. Mirrors masks_py; selected automatically at import
when built."""

import numpy as np

from libc.math cimport sqrt


def iou_counts(unsigned char[:, ::1] a, unsigned char[:, ::1] b):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    cdef Py_ssize_t y, x
    cdef long inter = 0, union_ = 0
    cdef bint av, bv
    for y in range(h):
        for x in range(w):
            av = a[y, x] != 0
            bv = b[y, x] != 0
            if av and bv:
                inter += 1
            if av or bv:
                union_ += 1
    return inter, union_


def boundary_map(unsigned char[:, ::1] mask):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef Py_ssize_t y, x
    cdef bint edge
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            edge = (
                y == 0 or mask[y - 1, x] == 0
                or y == h - 1 or mask[y + 1, x] == 0
                or x == 0 or mask[y, x - 1] == 0
                or x == w - 1 or mask[y, x + 1] == 0
            )
            if edge:
                out[y, x] = 1
    return out_arr


cdef bint _has_neighbor(unsigned char[:, ::1] other, Py_ssize_t y, Py_ssize_t x,
                        Py_ssize_t radius, Py_ssize_t h, Py_ssize_t w) noexcept:
    cdef Py_ssize_t y0 = y - radius, y1 = y + radius
    cdef Py_ssize_t x0 = x - radius, x1 = x + radius
    cdef Py_ssize_t yy, xx
    if y0 < 0:
        y0 = 0
    if x0 < 0:
        x0 = 0
    if y1 > h - 1:
        y1 = h - 1
    if x1 > w - 1:
        x1 = w - 1
    for yy in range(y0, y1 + 1):
        for xx in range(x0, x1 + 1):
            if other[yy, xx] != 0:
                return True
    return False


def boundary_match_counts(unsigned char[:, ::1] pred_boundary,
                          unsigned char[:, ::1] gt_boundary, Py_ssize_t radius):
    cdef Py_ssize_t h = pred_boundary.shape[0], w = pred_boundary.shape[1]
    cdef Py_ssize_t y, x
    cdef long pred_matched = 0, pred_total = 0, gt_matched = 0, gt_total = 0
    for y in range(h):
        for x in range(w):
            if pred_boundary[y, x] != 0:
                pred_total += 1
                if _has_neighbor(gt_boundary, y, x, radius, h, w):
                    pred_matched += 1
            if gt_boundary[y, x] != 0:
                gt_total += 1
                if _has_neighbor(pred_boundary, y, x, radius, h, w):
                    gt_matched += 1
    return pred_matched, pred_total, gt_matched, gt_total


def masked_depth_stats(unsigned char[:, ::1] mask, double[:, ::1] depth):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t y, x
    cdef long count = 0
    cdef double total = 0.0, value, mean, sq = 0.0
    cdef double lo = 0.0, hi = 0.0
    cdef bint first = True
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                continue
            value = depth[y, x]
            count += 1
            total += value
            if first:
                lo = value
                hi = value
                first = False
            else:
                if value < lo:
                    lo = value
                if value > hi:
                    hi = value
    if count == 0:
        raise ValueError("mask selects no pixels")
    mean = total / count
    for y in range(h):
        for x in range(w):
            if mask[y, x] != 0:
                value = depth[y, x] - mean
                sq += value * value
    return count, mean, sqrt(sq / count), lo, hi
