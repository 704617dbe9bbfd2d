"""From a network prediction grid to waypoints in image coordinates.

Cell ``(i, j)`` (column ``i``, row ``j``) with offsets ``(dx, dy)`` in [-1, 1]
maps to ``x = k * (i + (dx + 1) / 2)``, ``y = k * (j + (dy + 1) / 2)``; offsets
of 0 put the point on the cell centre.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import Waypoint


@dataclass(frozen=True)
class DecodeConfig:
    t_c: float = 0.9
    d_c: float = 8.0
    k: int = 8

    def __post_init__(self):
        if not 0.0 <= self.t_c <= 1.0:
            raise ValueError(f"t_c must be in [0, 1], got {self.t_c}")
        if self.d_c < 0:
            raise ValueError(f"d_c must be non-negative, got {self.d_c}")
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")


def cell_to_position(cell, offset, k: int):
    """Image coordinate from integer cell index and offset in [-1, 1] (per axis)."""
    return k * (np.asarray(cell, dtype=float) + (np.asarray(offset, dtype=float) + 1.0) / 2.0)


def position_to_cell(coord, k: int):
    """Inverse of :func:`cell_to_position`: (cell index, offset)."""
    q = np.asarray(coord, dtype=float) / k
    cell = np.floor(q)
    return cell.astype(int), 2.0 * (q - cell) - 1.0


def decode(pred: np.ndarray, config: DecodeConfig = DecodeConfig()) -> list[Waypoint]:
    """Waypoints of all cells whose confidence exceeds ``t_c`` (strictly).

    ``pred`` is ``(U_h, U_w, 3)`` with channels (p, dx, dy); ``pred[j, i]`` is
    the cell in row ``j`` and column ``i``. Output is sorted by descending
    confidence, ties by (row, column).
    """
    pred = np.asarray(pred)
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ValueError(f"prediction grid must be (U_h, U_w, 3), got {pred.shape}")
    p = pred[..., 0]
    rows, cols = np.nonzero(p > config.t_c)
    if rows.size == 0:
        return []
    conf = p[rows, cols]
    xs = cell_to_position(cols, pred[rows, cols, 1], config.k)
    ys = cell_to_position(rows, pred[rows, cols, 2], config.k)
    # np.nonzero is row-major, so a stable sort keeps (row, col) order on ties
    order = np.argsort(-conf, kind="stable")
    return [Waypoint(float(xs[n]), float(ys[n]), float(conf[n])) for n in order]


def suppress(points, d_c: float) -> list[Waypoint]:
    """Greedy highest-confidence-first suppression.

    A point is kept iff it is at least ``d_c`` away from every point kept
    before it. Input order breaks confidence ties.
    """
    pts = [w if isinstance(w, Waypoint) else Waypoint(*map(float, w)) for w in points]
    if not pts:
        return []
    xy = np.array([(w.x, w.y) for w in pts], dtype=float)
    conf = np.array([w.confidence for w in pts], dtype=float)
    order = np.argsort(-conf, kind="stable")
    near = cKDTree(xy).query_ball_point(xy, d_c) if d_c > 0 else [[] for _ in pts]
    dead = np.zeros(len(pts), dtype=bool)
    kept = []
    for n in order:
        if dead[n]:
            continue
        kept.append(pts[n])
        nb = np.asarray(near[n], dtype=int)
        if nb.size:
            d = np.hypot(*(xy[nb] - xy[n]).T)
            dead[nb[d < d_c]] = True
    return kept


def decode_and_suppress(pred: np.ndarray, config: DecodeConfig = DecodeConfig()) -> list[Waypoint]:
    return suppress(decode(pred, config), config.d_c)
