"""Weighted A* over the occupancy grid and waypoint-to-waypoint route planning."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import DeepWayError, clip_point, nearest_free, pixel_of

SQRT2 = math.sqrt(2.0)
# (drow, dcol, cost); axis moves first so insertion order is fixed
MOVES = ((-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
         (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2))


class UnreachableError(DeepWayError):
    """No free path exists between two points."""


class PartialPlanError(UnreachableError):
    """A leg of a route could not be planned; ``plan`` holds the legs done before it."""

    def __init__(self, message, plan, failed_leg):
        super().__init__(message)
        self.plan = plan
        self.failed_leg = failed_leg


@dataclass
class PathPlan:
    """Pixel path as ``(x, y)`` integer pairs, leg start indices and total cost."""

    pixels: np.ndarray
    legs: list = field(default_factory=list)
    cost: float = 0.0

    def leg(self, i: int) -> np.ndarray:
        """Pixels of leg ``i``, both endpoints included."""
        stop = self.legs[i + 1] + 1 if i + 1 < len(self.legs) else len(self.pixels)
        return self.pixels[self.legs[i]:stop]

    def to_json(self) -> dict:
        return {"pixels": self.pixels.tolist(), "legs": [int(i) for i in self.legs],
                "cost": float(self.cost)}

    @classmethod
    def from_json(cls, data: dict) -> "PathPlan":
        from .io import FormatError
        try:
            pix = np.asarray(data["pixels"], dtype=np.int64).reshape(-1, 2)
            legs = [int(i) for i in data["legs"]]
            cost = float(data["cost"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed path plan: {exc}") from exc
        if any(not 0 <= i < max(len(pix), 1) for i in legs) or legs != sorted(legs):
            raise FormatError("leg indices must be increasing positions in the pixel list")
        return cls(pix, legs, cost)


def snap(grid: np.ndarray, p, radius: float) -> tuple[int, int]:
    """(row, col) of the pixel holding ``p``, moved to the nearest free pixel
    within ``radius`` when occupied."""
    q = clip_point(grid.shape, p)
    r, c = pixel_of(q)
    if not grid[r, c]:
        return r, c
    f = nearest_free(grid, q, radius)
    if f is None:
        raise UnreachableError(f"point ({p[0]:.1f}, {p[1]:.1f}) is occupied with no free pixel "
                               f"within {radius}")
    return pixel_of(f)


def astar(grid, start, goal, w: float = 2.0, snap_radius: float = 8.0):
    """Weighted A* between two points; returns ``(pixels, cost)``.

    8-connected moves costing 1 or sqrt(2); a diagonal move is not allowed
    between two occupied pixels. ``f = g + w * h`` with the Euclidean
    distance as ``h``. Ties on ``f`` go to the larger ``g``, then to the
    earlier pushed node. ``pixels`` is an ``(n, 2)`` array of ``(x, y)``.
    """
    if not w >= 1:
        raise ValueError(f"heuristic weight must be >= 1, got {w}")
    occ = np.asarray(grid) != 0
    h, wd = occ.shape
    sr, sc = snap(occ, start, snap_radius)
    gr, gc = snap(occ, goal, snap_radius)
    if (sr, sc) == (gr, gc):
        return np.array([[sc, sr]], dtype=np.int64), 0.0
    free = ~occ
    n = h * wd
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=bool)
    s, t = sr * wd + sc, gr * wd + gc
    g[s] = 0.0
    count = 0
    heap = [(w * math.hypot(sr - gr, sc - gc), -0.0, count, s)]
    hypot = math.hypot
    push, pop = heapq.heappush, heapq.heappop
    while heap:
        _, neg_g, _, u = pop(heap)
        if closed[u]:
            continue
        if u == t:
            break
        closed[u] = True
        gu = -neg_g
        r, c = divmod(u, wd)
        for dr, dc, cost in MOVES:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < wd) or not free[rr, cc]:
                continue
            if dr and dc and occ[r, cc] and occ[rr, c]:
                continue
            v = rr * wd + cc
            if closed[v]:
                continue
            gv = gu + cost
            if gv < g[v]:
                g[v] = gv
                parent[v] = u
                count += 1
                push(heap, (gv + w * hypot(rr - gr, cc - gc), -gv, count, v))
    if not np.isfinite(g[t]):
        raise UnreachableError(f"no path from ({sc}, {sr}) to ({gc}, {gr})")
    path = [t]
    while path[-1] != s:
        path.append(int(parent[path[-1]]))
    path = np.array(path[::-1], dtype=np.int64)
    rows, cols = np.divmod(path, wd)
    return np.column_stack((cols, rows)), float(g[t])


def inflate(grid, radius: float) -> np.ndarray:
    """Occupied pixels grown by a disc of ``radius``."""
    occ = np.asarray(grid) != 0
    if radius <= 0:
        return occ
    k = int(math.ceil(radius))
    yy, xx = np.mgrid[-k:k + 1, -k:k + 1]
    return ndimage.binary_dilation(occ, structure=(xx**2 + yy**2) <= radius**2)


def plan_route(grid, order, w: float = 2.0, snap_radius: float = 8.0,
               inflation: float = 0.0) -> PathPlan:
    """Concatenated A* legs between consecutive waypoints of ``order``.

    ``order`` is a route order (its ``sequence`` is used) or a plain list of
    points. Shared leg endpoints appear once; ``legs[i]`` is the index of the
    first pixel of leg ``i``.
    """
    seq = list(getattr(order, "sequence", order))
    if not seq:
        raise ValueError("route order is empty")
    occ = inflate(grid, inflation)
    if len(seq) == 1:
        r, c = snap(occ, seq[0], snap_radius)
        return PathPlan(np.array([[c, r]], dtype=np.int64), [], 0.0)
    pixels, legs, total = [], [], 0.0
    for i, (a, b) in enumerate(zip(seq[:-1], seq[1:])):
        try:
            pix, cost = astar(occ, a, b, w, snap_radius)
        except UnreachableError as exc:
            done = PathPlan(np.array(pixels, dtype=np.int64).reshape(-1, 2), legs, total)
            raise PartialPlanError(f"leg {i} unreachable ({exc}); {i} leg(s) planned", done, i) from exc
        legs.append(max(len(pixels) - 1, 0))
        pixels.extend(pix.tolist() if not pixels else pix[1:].tolist())
        total += cost
    return PathPlan(np.array(pixels, dtype=np.int64), legs, total)
