"""Shared raster/geometry types and line-traversal primitives.

Coordinate convention: ``x`` is the column index, ``y`` the row index and the
origin sits on the centre of the top-left pixel, so pixel ``(row, col)``
covers the square ``[col - 0.5, col + 0.5] x [row - 0.5, row + 0.5]``.
"""
from __future__ import annotations

import math
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "DeepWayError",
    "BoundsError",
    "DegenerateGeometryError",
    "Point",
    "Waypoint",
    "as_grid",
    "normalize_angle",
    "in_bounds",
    "line_pixels",
    "raster_line",
    "count_risings",
    "segment_row_crossings",
    "occupied_runs",
    "nearest_free",
    "pixel_of",
    "clip_point",
    "points_array",
]

# tolerance on the segment parameter when deciding that a line passes
# exactly through a pixel corner
_CORNER_EPS = 1e-9


class DeepWayError(Exception):
    """Base class for all package errors."""


class BoundsError(DeepWayError, IndexError):
    """A point lies outside the grid."""


class DegenerateGeometryError(DeepWayError, ValueError):
    """Input geometry does not allow the requested construction."""


class Point(NamedTuple):
    x: float
    y: float


class Waypoint(NamedTuple):
    x: float
    y: float
    confidence: float = 1.0

    @property
    def position(self) -> Point:
        return Point(self.x, self.y)


def as_grid(values) -> np.ndarray:
    """Validate ``values`` as an occupancy grid and return a read-only uint8 copy."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"occupancy grid must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("occupancy grid cells must be exactly 0 or 1")
    grid = arr.astype(np.uint8, copy=True)
    grid.flags.writeable = False
    return grid


def normalize_angle(theta: float) -> float:
    """Map an orientation to (-pi/2, pi/2]; theta and theta + pi are the same row direction."""
    t = math.fmod(theta, math.pi)
    if t <= -math.pi / 2:
        t += math.pi
    elif t > math.pi / 2:
        t -= math.pi
    return t


def in_bounds(shape: Sequence[int], p) -> bool:
    h, w = shape[:2]
    x, y = float(p[0]), float(p[1])
    return -0.5 <= x < w - 0.5 and -0.5 <= y < h - 0.5


def _check(shape, p):
    if not (math.isfinite(p[0]) and math.isfinite(p[1])):
        raise BoundsError(f"non-finite point {tuple(p)}")
    if not in_bounds(shape, p):
        raise BoundsError(f"point {tuple(p)} outside grid of shape {tuple(shape[:2])}")


def _supercover(x0, y0, x1, y1):
    # grid traversal on pixel squares; shift so pixel c spans [c, c + 1)
    ux0, uy0, ux1, uy1 = x0 + 0.5, y0 + 0.5, x1 + 0.5, y1 + 0.5
    i, j = math.floor(ux0), math.floor(uy0)
    nx = abs(math.floor(ux1) - i)
    ny = abs(math.floor(uy1) - j)
    dx, dy = ux1 - ux0, uy1 - uy0
    si = 1 if dx > 0 else -1
    sj = 1 if dy > 0 else -1
    # parameters where the segment enters the next column / row; sequential
    # sums so that the values equal those of a step-by-step traversal
    tx = ty = np.zeros(0)
    if nx:
        tdx = 1.0 / abs(dx)
        tx = np.cumsum(np.r_[((i + 1 - ux0) if dx > 0 else (ux0 - i)) * tdx, np.full(nx - 1, tdx)])
    if ny:
        tdy = 1.0 / abs(dy)
        ty = np.cumsum(np.r_[((j + 1 - uy0) if dy > 0 else (uy0 - j)) * tdy, np.full(ny - 1, tdy)])
    t = np.concatenate((tx, ty))
    is_y = np.r_[np.zeros(nx, bool), np.ones(ny, bool)]
    order = np.argsort(t, kind="stable")
    t, is_y = t[order], is_y[order]
    # an x and a y event closer than the tolerance are one exact corner pass
    cand = np.flatnonzero((is_y[1:] != is_y[:-1]) & (t[1:] - t[:-1] <= _CORNER_EPS))
    if cand.size > 1 and np.any(np.diff(cand) == 1):
        keep, last = [], -2
        for c in cand:
            if c != last + 1:
                keep.append(c)
                last = c
        cand = np.asarray(keep, dtype=int)
    corner = np.zeros(len(t), bool)
    corner[cand] = True
    drop = np.zeros(len(t), bool)
    drop[cand + 1] = True
    ev_corner = corner[~drop]
    ev_y = is_y[~drop]
    di = np.where(ev_corner | ~ev_y, si, 0)
    dj = np.where(ev_corner | ev_y, sj, 0)
    ci = i + np.cumsum(di)
    cj = j + np.cumsum(dj)
    k = np.cumsum(1 + ev_corner)
    # corner events emit the two side pixels one step before the diagonal one
    ne = len(ev_corner)
    nout = 1 + ne + 2 * int(ev_corner.sum())
    cols = np.empty(nout, dtype=np.intp)
    rows = np.empty(nout, dtype=np.intp)
    steps = np.empty(nout, dtype=np.intp)
    cols[0], rows[0], steps[0] = i, j, 0
    pos = 1 + np.arange(ne) + 2 * (np.cumsum(ev_corner) - ev_corner)
    cpos = pos[ev_corner]
    prev_i = ci - di
    prev_j = cj - dj
    cols[cpos], rows[cpos], steps[cpos] = prev_i[ev_corner] + si, prev_j[ev_corner], k[ev_corner] - 1
    cols[cpos + 1], rows[cpos + 1], steps[cpos + 1] = prev_i[ev_corner], prev_j[ev_corner] + sj, k[ev_corner] - 1
    fpos = pos + 2 * ev_corner
    cols[fpos], rows[fpos], steps[fpos] = ci, cj, k
    return cols, rows, steps


def _traverse(a, b, shape):
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    if shape is not None:
        _check(shape, (ax, ay))
        _check(shape, (bx, by))
    flip = (ax, ay) > (bx, by)
    if flip:
        ax, ay, bx, by = bx, by, ax, ay
    cols, rows, steps = _supercover(ax, ay, bx, by)
    pix = np.column_stack((rows, cols)).astype(np.intp)
    steps = np.asarray(steps, dtype=np.intp)
    if shape is not None:
        h, w = shape[:2]
        keep = (pix[:, 0] >= 0) & (pix[:, 0] < h) & (pix[:, 1] >= 0) & (pix[:, 1] < w)
        pix, steps = pix[keep], steps[keep]
    if flip:
        pix, steps = pix[::-1], steps[-1] - steps[::-1]
    return pix, steps


def line_pixels(a, b, shape: Sequence[int] | None = None) -> np.ndarray:
    """Pixels touched by the real segment ``a -> b`` (supercover), ordered from a to b.

    Returns an ``(n, 2)`` int array of ``(row, col)`` indices. Each pixel appears
    once. When the segment goes exactly through a pixel corner both side pixels
    are included. The traversal is computed in a canonical direction so that
    swapping ``a`` and ``b`` yields the same pixel set in reverse order.
    """
    return _traverse(a, b, shape)[0]


def raster_line(grid: np.ndarray, a, b) -> np.ndarray:
    """Grid values sampled along the supercover of ``a -> b``, endpoints included."""
    pix = line_pixels(a, b, grid.shape)
    return np.asarray(grid)[pix[:, 0], pix[:, 1]]


def _segment_samples(grid, a, b):
    # one sample per position along the segment; the two side pixels met at an
    # exact corner share a position and are OR-ed together
    pix, steps = _traverse(a, b, grid.shape)
    vals = np.asarray(grid)[pix[:, 0], pix[:, 1]].astype(bool)
    if len(steps) and np.any(steps[1:] == steps[:-1]):
        merged = np.zeros(steps[-1] + 1, dtype=bool)
        np.logical_or.at(merged, steps, vals)
        first = np.searchsorted(steps, np.arange(steps[-1] + 1))
        present = np.zeros(steps[-1] + 1, dtype=bool)
        present[steps] = True
        rep = first[present]
        # represent a corner position by its occupied side pixel when there is one
        pair = (rep + 1 < len(steps))
        pair[pair] = steps[rep[pair] + 1] == steps[rep[pair]]
        swap = pair.copy()
        swap[pair] = ~vals[rep[pair]] & vals[rep[pair] + 1]
        rep = rep + swap
        out = merged[present]
        # the corner point also belongs to the closed squares before and after it,
        # so diagonal touches between occupied pixels do not split a run
        corner = np.flatnonzero(pair)
        inner = corner[(corner > 0) & (corner < len(out) - 1)]
        out[inner] |= out[inner - 1] & out[inner + 1]
        return out, pix[rep]
    return vals, pix


def count_risings(samples) -> int:
    """Number of 0 -> 1 transitions; a leading 1 counts as a rising edge."""
    s = np.asarray(samples, dtype=bool).ravel()
    if s.size == 0:
        raise ValueError("count_risings needs at least one sample")
    return int(s[0]) + int(np.count_nonzero(s[1:] & ~s[:-1]))


def segment_row_crossings(grid: np.ndarray, a, b) -> int:
    """Number of distinct occupied runs crossed by the segment ``a -> b``.

    Equal to ``count_risings(raster_line(grid, a, b))`` except at exact corner
    passes, where the two touched side pixels are counted as one sample so that
    a row cannot be split into two runs by the sample order.
    """
    return count_risings(_segment_samples(grid, a, b)[0])


def occupied_runs(grid: np.ndarray, a, b) -> list[tuple[np.ndarray, np.ndarray]]:
    """Occupied runs along ``a -> b`` as ``(first_pixel, last_pixel)`` pairs in (row, col)."""
    s, pix = _segment_samples(grid, a, b)
    edges = np.diff(np.concatenate(([False], s, [False])).astype(np.int8))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return [(pix[s0], pix[s1]) for s0, s1 in zip(starts, stops)]


def nearest_free(grid: np.ndarray, p, max_radius: float) -> Point | None:
    """Centre of the free pixel closest to ``p`` within ``max_radius``, or None.

    Ties are broken by row then column so the result is deterministic.
    """
    h, w = grid.shape
    x, y = float(p[0]), float(p[1])
    r = int(math.ceil(max_radius)) + 1
    c0, c1 = max(0, int(math.floor(x)) - r), min(w, int(math.ceil(x)) + r + 1)
    r0, r1 = max(0, int(math.floor(y)) - r), min(h, int(math.ceil(y)) + r + 1)
    if c0 >= c1 or r0 >= r1:
        return None
    rows, cols = np.mgrid[r0:r1, c0:c1]
    d2 = (cols - x) ** 2 + (rows - y) ** 2
    ok = (np.asarray(grid)[r0:r1, c0:c1] == 0) & (d2 <= max_radius**2)
    if not ok.any():
        return None
    d2 = np.where(ok, d2, np.inf)
    k = int(np.argmin(d2))  # first minimum in row-major order
    return Point(float(cols.flat[k]), float(rows.flat[k]))


def pixel_of(p) -> tuple[int, int]:
    """(row, col) of the pixel containing point ``p``."""
    return int(math.floor(float(p[1]) + 0.5)), int(math.floor(float(p[0]) + 0.5))


def clip_point(shape: Sequence[int], p) -> Point:
    """Clamp ``p`` onto the valid pixel-centre range of a grid."""
    h, w = shape[:2]
    return Point(min(max(float(p[0]), 0.0), w - 1.0), min(max(float(p[1]), 0.0), h - 1.0))


def points_array(points: Iterable) -> np.ndarray:
    """(n, 2) float array of the x, y coordinates of points or waypoints."""
    pts = [(float(p[0]), float(p[1])) for p in points]
    return np.asarray(pts, dtype=float).reshape(-1, 2)
