"""Planar helpers for pixel-space polylines.

Pixel coordinates are ``(x, y)`` = ``(column, row)`` with the pixel centre at
integer coordinates. Headings use the map convention: ``0`` points to ``+x``
(right), angles grow counter-clockwise as seen on screen, so a heading of
``pi/2`` points "up" (towards decreasing row).
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into ``[0, 2*pi)``."""
    out = np.mod(theta, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def angdiff(a: float, b: float) -> float:
    """Smallest absolute difference between two headings, in ``[0, pi]``."""
    d = abs(wrap_angle(a) - wrap_angle(b))
    return min(d, TWO_PI - d)


def heading(dx, dy):
    """Heading of a pixel-space displacement ``(dx, dy)``."""
    return wrap_angle(np.arctan2(-np.asarray(dy, dtype=float), np.asarray(dx, dtype=float)))


def mean_tangent(points: np.ndarray) -> float:
    """Length-weighted mean tangent heading of a polyline."""
    seg = np.diff(points, axis=0)
    total = seg.sum(axis=0)
    return float(heading(total[0], total[1]))


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.hypot(*(p - (a + t * ab))))


def point_polyline_distance(p, points: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    return min(point_segment_distance(p, points[i], points[i + 1]) for i in range(len(points) - 1))


def is_row_monotone(points: np.ndarray) -> bool:
    """True when the row coordinate strictly decreases along the polyline."""
    return bool(np.all(np.diff(points[:, 1]) < 0))


def interp_x_at_rows(points: np.ndarray, rows) -> np.ndarray:
    """Piecewise-linear x of a row-monotone polyline at the given rows.

    Rows outside the polyline's vertical extent are clamped to the end points.
    """
    ys = points[::-1, 1]
    xs = points[::-1, 0]
    return np.interp(np.asarray(rows, dtype=float), ys, xs)


def polyline_length(points: np.ndarray) -> float:
    return float(np.hypot(*np.diff(points, axis=0).T).sum())
