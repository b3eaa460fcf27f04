"""Planar geometry helpers shared by the detector, metrics, and world models."""

import numpy as np


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = (a + np.pi) % (2.0 * np.pi) - np.pi
    if a <= -np.pi:
        a = np.pi
    return float(a)


def rot2d(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s], [s, c]])


def rect_corners(cx, cy, length, width, yaw) -> np.ndarray:
    """BEV corners of a rotated rectangle, counter-clockwise, shape (4, 2)."""
    local = np.array(
        [
            [length / 2.0, width / 2.0],
            [-length / 2.0, width / 2.0],
            [-length / 2.0, -width / 2.0],
            [length / 2.0, -width / 2.0],
        ]
    )
    return local @ rot2d(yaw).T + np.array([cx, cy])


def points_in_rect(xs, ys, cx, cy, length, width, yaw):
    """Boolean mask of BEV points inside (boundary included) a rotated rect."""
    dx = np.asarray(xs, dtype=np.float64) - cx
    dy = np.asarray(ys, dtype=np.float64) - cy
    c, s = np.cos(yaw), np.sin(yaw)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= length / 2.0) & (np.abs(v) <= width / 2.0)


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as (n, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    x = poly[:, 0]
    y = poly[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a convex polygon.

    Both inputs are (n, 2) arrays with counter-clockwise winding. Returns the
    intersection polygon, possibly empty.
    """
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        a = clipper[i]
        b = clipper[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        inp = output
        output = []
        prev = inp[-1]
        prev_in = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]) >= 0.0
        for cur in inp:
            cur_in = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]) >= 0.0
            if cur_in != prev_in:
                # edge crossing: interpolate the intersection point
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = (ex * (a[1] - prev[1]) - ey * (a[0] - prev[0])) / denom
                    output.append((prev[0] + t * dx, prev[1] + t * dy))
            if cur_in:
                output.append(cur)
            prev = cur
            prev_in = cur_in
    return np.array(output) if output else np.empty((0, 2))
