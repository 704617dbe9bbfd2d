"""Waypoint refinement and ordering: clustering, row angle, missing/duplicate
repair, assembly of the two field sides and A-B-B-A sequencing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.measure import block_reduce
from skimage.transform import probabilistic_hough_line

from .core import (DegenerateGeometryError, DeepWayError, Point, Waypoint, clip_point,
                   line_pixels, nearest_free, normalize_angle, occupied_runs, points_array)

log = logging.getLogger(__name__)

NOISE = -1
SYNTHETIC_CONFIDENCE = 0.5


class EmptyGridError(DeepWayError, ValueError):
    """The grid has no occupied pixel to estimate a row angle from."""


class OrderingError(DeepWayError, ValueError):
    """A route cannot be built from the given groups."""


class RowMap:
    """Occupancy grid with its rows labelled as 8-connected components.

    Rows are counted along a segment as runs of occupied pixels, with
    consecutive runs of the same component merged: a segment that grazes the
    stepped edge of one row and re-enters it still meets that row once.
    """

    def __init__(self, grid):
        self.grid = np.asarray(grid)
        self.occ = self.grid != 0
        self.labels = _label_rows(self.occ)
        self.shape = self.grid.shape

    def runs(self, a, b):
        """``(label, first_pixel, last_pixel)`` of each row met from a to b."""
        a, b = clip_point(self.shape, a), clip_point(self.shape, b)
        out = []
        for p0, p1 in occupied_runs(self.occ, a, b):
            lab = int(self.labels[p0[0], p0[1]])
            if out and out[-1][0] == lab:
                out[-1] = (lab, out[-1][1], p1)
            else:
                out.append((lab, p0, p1))
        return out

    def crossings(self, a, b) -> int:
        return len(self.runs(a, b))


def _rowmap(grid) -> RowMap:
    return grid if isinstance(grid, RowMap) else RowMap(grid)


# clustering -------------------------------------------------------------------

def dbscan(points, eps: float, min_pts: int):
    """Plain DBSCAN with the Euclidean metric.

    Points are scanned in index order and a cluster is grown breadth first
    before the next one starts, so a border point reachable from several
    clusters joins the one created first. Returns ``(labels, clusters, noise)``
    with labels ``0..n_clusters-1`` or :data:`NOISE`, clusters as lists of
    point indices and noise as a list of indices.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be at least 1, got {min_pts}")
    xy = points_array(points)
    n = len(xy)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels, [], []
    neigh = cKDTree(xy).query_ball_point(xy, eps)
    neigh = [sorted(nb) for nb in neigh]
    core = np.array([len(nb) >= min_pts for nb in neigh])
    visited = np.zeros(n, dtype=bool)
    n_clusters = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        queue = [i]
        visited[i] = True
        labels[i] = n_clusters
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            for q in neigh[j]:
                if labels[q] == NOISE:
                    labels[q] = n_clusters
                if core[q] and not visited[q]:
                    visited[q] = True
                    queue.append(q)
        n_clusters += 1
    clusters = [np.flatnonzero(labels == c).tolist() for c in range(n_clusters)]
    return labels, clusters, np.flatnonzero(labels == NOISE).tolist()


def default_eps(points, factor: float = 2.5) -> float:
    """``factor`` times the median nearest-neighbour distance."""
    xy = points_array(points)
    if len(xy) < 2:
        return 1.0
    d, _ = cKDTree(xy).query(xy, k=2)
    return max(factor * float(np.median(d[:, 1])), 1e-6)


# row angle --------------------------------------------------------------------

@dataclass(frozen=True)
class HoughParams:
    threshold: int = 30
    line_length: int = 10
    line_gap: int = 5
    max_side: int = 512
    min_segments: int = 5
    min_coherence: float = 0.3  # resultant length of the doubled segment angles
    trim: float = math.radians(10)
    seed: int = 0


def _probe_points(shape, offset=0.1):
    h, w = shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    offs = np.array([-1.0, 0.0, 1.0]) * offset
    return [(cx + dx * w, cy + dy * h) for dy in offs for dx in offs]


def line_in_grid(shape, p, u):
    """Endpoints of the line through ``p`` with direction ``u`` clipped to the
    box of pixel centres, or None when it misses the box."""
    h, w = shape[:2]
    lo, hi = -math.inf, math.inf
    for p0, d, top in ((float(p[0]), float(u[0]), w - 1.0), (float(p[1]), float(u[1]), h - 1.0)):
        if abs(d) < 1e-12:
            if not 0.0 <= p0 <= top:
                return None
            continue
        t0, t1 = (0.0 - p0) / d, (top - p0) / d
        lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
    if lo > hi:
        return None
    a = np.asarray(p, float)[:2] + lo * np.asarray(u, float)
    b = np.asarray(p, float)[:2] + hi * np.asarray(u, float)
    return clip_point(shape, a), clip_point(shape, b)


def _rows_touched(labels, theta, samples):
    # distinct rows (8-connected components) met by full-image lines through
    # the samples; a line grazing one row many times counts it once
    u = (math.cos(theta), math.sin(theta))
    score = 0
    for s in samples:
        ends = line_in_grid(labels.shape, s, u)
        if ends is None:
            continue
        pix = line_pixels(*ends, labels.shape)
        lab = labels[pix[:, 0], pix[:, 1]]
        score += len(np.unique(lab[lab > 0]))
    return score


def _label_rows(occ):
    return ndimage.label(occ, structure=np.ones((3, 3), bool))[0]


def _fallback_angle(labels, n_angles=180, offset=0.1):
    samples = _probe_points(labels.shape, offset)
    angles = -math.pi / 2 + math.pi * np.arange(1, n_angles + 1) / n_angles
    scores = np.array([_rows_touched(labels, t, samples) for t in angles])
    best = scores == scores.min()
    # centre of the best angles on the doubled-angle circle
    phi = 2 * angles[best]
    theta = normalize_angle(math.atan2(np.sum(np.sin(phi)), np.sum(np.cos(phi))) / 2)
    return theta, int(scores.min())


def _doubled_mean(phi, wgt):
    return normalize_angle(math.atan2(np.sum(wgt * np.sin(phi)), np.sum(wgt * np.cos(phi))) / 2)


def estimate_angle(grid, params: HoughParams = HoughParams()) -> tuple[float, str]:
    """Row orientation in (-pi/2, pi/2] and the method used ("hough" or "fallback").

    Segment orientations from the progressive probabilistic Hough transform
    are averaged on the doubled-angle circle. With too few segments, or
    segments without a dominant direction, the direction is searched instead: the one whose lines through points near
    the centre meet the fewest rows. The search also runs when lines at the
    Hough angle meet more than two rows on average, and the angle meeting
    fewer rows is kept.
    """
    grid = np.asarray(grid)
    if not np.any(grid):
        raise EmptyGridError("grid has no occupied pixels")
    occ = grid != 0
    img = occ
    f = int(math.ceil(max(img.shape) / params.max_side))
    if f > 1:
        img = block_reduce(img, (f, f), np.max)
    segs = probabilistic_hough_line(img, threshold=params.threshold, line_length=params.line_length,
                                    line_gap=params.line_gap, rng=params.seed)
    labels = _label_rows(occ)
    if len(segs) >= params.min_segments:
        d = np.array([(x1 - x0, y1 - y0) for (x0, y0), (x1, y1) in segs], dtype=float)
        phi = 2 * np.arctan2(d[:, 1], d[:, 0])
        wgt = np.hypot(d[:, 0], d[:, 1])
        coherence = abs(np.sum(wgt * np.exp(1j * phi))) / np.sum(wgt)
        if coherence < params.min_coherence:
            log.info("Hough segments show no dominant direction, using the row-count search")
            return _fallback_angle(labels)[0], "fallback"
        mean = _doubled_mean(phi, wgt)
        # re-average without segments running across the rows
        for _ in range(2):
            near = np.abs(np.angle(np.exp(1j * (phi - 2 * mean)))) <= 2 * params.trim
            if near.any():
                mean = _doubled_mean(phi[near], wgt[near])
        probes = _probe_points(occ.shape)
        score = _rows_touched(labels, mean, probes)
        # a line inside a corridor meets at most the two rows bounding it
        if score <= 2 * len(probes):
            return mean, "hough"
        fb_angle, fb_score = _fallback_angle(labels)
        if score <= fb_score:
            return mean, "hough"
        log.info("Hough angle meets more rows than the search result, using the search")
        near = np.abs(np.angle(np.exp(1j * (phi - 2 * fb_angle)))) <= 2 * params.trim
        if near.any():
            fb_angle = _doubled_mean(phi[near], wgt[near])
        return fb_angle, "fallback"
    log.info("only %d Hough segments, using the row-count search", len(segs))
    return _fallback_angle(labels)[0], "fallback"


def row_spacing(grid, angle: float) -> float:
    """Median distance between consecutive rows along the perpendicular.

    Measured on lines across the rows through points near the image centre;
    falls back to 1 when fewer than two rows are met.
    """
    grid = np.asarray(grid) != 0
    n = (-math.sin(angle), math.cos(angle))
    gaps = []
    for s in _probe_points(grid.shape):
        ends = line_in_grid(grid.shape, s, n)
        if ends is None:
            continue
        runs = occupied_runs(grid, *ends)
        if len(runs) < 2:
            continue
        centres = np.array([(p0 + p1) / 2 for p0, p1 in runs], dtype=float)
        gaps.extend(np.hypot(*np.diff(centres, axis=0).T))
    return float(np.median(gaps)) if gaps else 1.0


# clusters ---------------------------------------------------------------------

@dataclass
class Cluster:
    members: list
    projections: list = field(default_factory=list)
    source: list = field(default_factory=list)  # originating cluster id per member

    def __len__(self):
        return len(self.members)

    @property
    def interval(self) -> tuple[float, float]:
        return min(self.projections), max(self.projections)


def _wp(p) -> Waypoint:
    return p if isinstance(p, Waypoint) else Waypoint(float(p[0]), float(p[1]), 1.0)


def projection(p, angle: float) -> float:
    """Coordinate of ``p`` along the perpendicular to rows at ``angle``."""
    return -float(p[0]) * math.sin(angle) + float(p[1]) * math.cos(angle)


def project_and_sort(cluster: Cluster, angle: float) -> Cluster:
    if not cluster.members:
        raise ValueError("cannot sort an empty cluster")
    src = cluster.source or [0] * len(cluster.members)
    items = [(projection(m, angle), m[0], m[1], _wp(m), s) for m, s in zip(cluster.members, src)]
    items.sort(key=lambda t: t[:3])
    return Cluster([t[3] for t in items], [t[0] for t in items], [t[4] for t in items])


def along(p, angle: float) -> float:
    """Coordinate of ``p`` along the rows at ``angle``."""
    return float(p[0]) * math.cos(angle) + float(p[1]) * math.sin(angle)


def split_mixed(cluster: Cluster, angle: float, spacing: float) -> list[Cluster]:
    """Split a cluster that holds both ends of some corridors.

    Short rows let density clustering chain the two field sides together.
    Members are bucketed into corridors by projection (gaps above half the
    row spacing separate corridors); a bucket whose members lie more than
    half a spacing apart along the rows is cut at its largest along-row gap.
    Single-ended buckets join the side whose along-row position is closer in
    the nearest cut bucket. Clusters without such buckets come back unchanged.
    """
    if len(cluster) < 2:
        return [cluster]
    tol = spacing / 2
    buckets, cur = [], [0]
    for n in range(1, len(cluster)):
        if cluster.projections[n] - cluster.projections[n - 1] > tol:
            buckets.append(cur)
            cur = []
        cur.append(n)
    buckets.append(cur)
    q = np.array([along(m, angle) for m in cluster.members])
    side = np.full(len(cluster), -1)
    cuts = []  # (bucket projection, mean q low side, mean q high side)
    for b in buckets:
        qb = q[b]
        if qb.max() - qb.min() <= tol:
            continue
        srt = np.argsort(qb, kind="stable")
        k = int(np.argmax(np.diff(qb[srt])))
        low = [b[i] for i in srt[:k + 1]]
        high = [b[i] for i in srt[k + 1:]]
        side[low], side[high] = 0, 1
        cuts.append((float(np.mean([cluster.projections[i] for i in b])),
                     float(q[low].mean()), float(q[high].mean())))
    if not cuts:
        return [cluster]
    cp = np.array([c[0] for c in cuts])
    for b in buckets:
        if side[b[0]] >= 0:
            continue
        pb = float(np.mean([cluster.projections[i] for i in b]))
        _, ql, qh = cuts[int(np.argmin(np.abs(cp - pb)))]
        side[b] = int(abs(q[b].mean() - qh) < abs(q[b].mean() - ql))
    src = cluster.source or [0] * len(cluster)
    out = []
    for s_ in (0, 1):
        idx = np.flatnonzero(side == s_)
        out.append(Cluster([cluster.members[i] for i in idx], [cluster.projections[i] for i in idx],
                           [(src[i], s_) for i in idx]))
    return [c for c in out if len(c)]


def refine_cluster(cluster: Cluster, grid, angle: float, d_c: float = 8.0,
                   spacing: float | None = None) -> Cluster:
    """Drop duplicates and insert missing waypoints along a sorted cluster.

    Consecutive waypoints are compared through the number of rows their
    segment crosses: one is expected, none marks a duplicate (the lower
    confidence one goes) and ``m >= 2`` means ``m - 1`` corridors were
    skipped, so one synthetic waypoint is placed in the middle of each free
    gap between the crossed runs. With ``spacing`` given, a pair at least
    half a spacing apart is kept even without a row between them, since that
    happens where the segment passes through a hole in the row.
    """
    rm = _rowmap(grid)
    if len(cluster) < 2:
        return cluster
    src = cluster.source or [0] * len(cluster.members)
    kept = [(cluster.members[0], src[0])]
    for m, s in zip(cluster.members[1:], src[1:]):
        prev = kept[-1][0]
        runs = rm.runs(prev, m)
        if not runs:
            if spacing is not None and math.dist(prev[:2], m[:2]) >= spacing / 2:
                kept.append((m, s))
                continue
            if m.confidence > prev.confidence:
                kept[-1] = (m, s)
            continue
        for (_, _, end), (_, start, _) in zip(runs[:-1], runs[1:]):
            mid = ((end[1] + start[1]) / 2, (end[0] + start[0]) / 2)
            p = nearest_free(rm.grid, mid, d_c) or Point(*mid)
            kept.append((Waypoint(p[0], p[1], SYNTHETIC_CONFIDENCE), s))
        kept.append((m, s))
    return project_and_sort(Cluster([k for k, _ in kept], source=[s for _, s in kept]), angle)


# groups -----------------------------------------------------------------------

def _spacing(clusters) -> float:
    gaps = [np.diff(c.projections) for c in clusters if len(c) > 1]
    gaps = np.concatenate(gaps) if gaps else np.zeros(0)
    gaps = gaps[gaps > 0]
    return float(np.median(gaps)) if gaps.size else 1.0


def _covered(intervals, lo, hi):
    # length of [lo, hi] covered by the union of intervals
    total = 0.0
    for a, b in intervals:
        total += max(0.0, min(b, hi) - max(a, lo))
    return total


def _crossings(rm, a, b):
    return rm.crossings(a, b)


def _neighbours(group: Cluster, p: float):
    k = int(np.searchsorted(group.projections, p))
    return [group.members[i] for i in (k - 1, k) if 0 <= i < len(group)]


def _refine_borders(A: Cluster, B: Cluster, grid, angle):
    groups = [A, B]
    for g in (0, 1):
        here = groups[g]
        moved = []
        for i, (m, s) in enumerate(zip(here.members, here.source)):
            at_border = ((i > 0 and here.source[i - 1] != s)
                         or (i + 1 < len(here) and here.source[i + 1] != s))
            if not at_border:
                continue
            own = [here.members[j] for j in (i - 1, i + 1) if 0 <= j < len(here)]
            bad = any(_crossings(grid, m, o) != 1 for o in own)
            other = _neighbours(groups[1 - g], here.projections[i])
            good = bool(other) and all(_crossings(grid, m, o) == 1 for o in other)
            if bad and good:
                moved.append(i)
        if moved:
            there = groups[1 - g]
            keep = [i for i in range(len(here)) if i not in moved]
            groups[1 - g] = project_and_sort(
                Cluster(there.members + [here.members[i] for i in moved],
                        source=there.source + [here.source[i] for i in moved]), angle)
            groups[g] = project_and_sort(
                Cluster([here.members[i] for i in keep], source=[here.source[i] for i in keep]),
                angle) if keep else Cluster([], [], [])
    return groups[0], groups[1]


def merge_into_groups(clusters, noise, angle: float, grid, d_c: float = 8.0,
                      spacing: float | None = None):
    """Assemble clusters (noise points as singletons) into the two field sides.

    The largest cluster seeds group A. Remaining clusters, largest first, go
    to the group whose covered projection range they overlap least; ties go
    to the spatially closer group. Waypoints at the joins between merged
    clusters then switch group when their segments to same-group neighbours
    cross the wrong number of rows and the other group fits them. Both groups
    are refined again after merging.
    """
    grid = _rowmap(grid)
    items = [project_and_sort(Cluster(list(c), source=[n] * len(c)), angle)
             for n, c in enumerate(clusters) if len(c)]
    items += [project_and_sort(Cluster([p], source=[len(clusters) + n]), angle)
              for n, p in enumerate(noise)]
    if not items:
        raise OrderingError("no waypoints to group")
    if len(items) == 1:
        c = items[0]
        raise DegenerateGeometryError(
            f"all {len(c)} waypoints form a single cluster spanning projections "
            f"{c.interval[0]:.1f}..{c.interval[1]:.1f}; cannot split it into two field sides")
    half = _spacing(items) / 2
    items.sort(key=lambda c: (-len(c), c.interval[0]))
    groups = [[items[0]], []]
    for c in items[1:]:
        lo, hi = c.interval[0] - half, c.interval[1] + half
        over = [_covered([(a - half, b + half) for a, b in (g.interval for g in grp)], lo, hi)
                for grp in groups]
        if over[0] != over[1]:
            g = int(np.argmin(over))
        else:
            xy = points_array(c.members)
            dist = [min((np.min(np.hypot(*(xy[:, None] - points_array(o.members)[None]).T))
                         for o in grp), default=math.inf) for grp in groups]
            g = int(np.argmin(dist))
        groups[g].append(c)
    merged = []
    for grp in groups:
        members = [m for c in grp for m in c.members]
        source = [s for c in grp for s in c.source]
        merged.append(project_and_sort(Cluster(members, source=source), angle) if members
                      else Cluster([], [], []))
    A, B = merged
    if len(B) == 0:
        raise DegenerateGeometryError("every cluster overlaps group A; no second field side found")
    A, B = _refine_borders(A, B, grid, angle)
    return (refine_cluster(A, grid, angle, d_c, spacing) if len(A) else A,
            refine_cluster(B, grid, angle, d_c, spacing) if len(B) else B)


# final order --------------------------------------------------------------------

@dataclass
class RouteOrder:
    sequence: list
    groups: list
    angle: float = 0.0
    violations: list = field(default_factory=list)  # (hop index, crossings) of unexpected hops

    @property
    def corridor_breaks(self) -> list[int]:
        """Hop indices ``i`` (sequence[i] -> sequence[i+1]) that change group."""
        return [i for i in range(len(self.groups) - 1) if self.groups[i] != self.groups[i + 1]]

    def to_json(self) -> dict:
        return {
            "sequence": [[float(w[0]), float(w[1])] for w in self.sequence],
            "confidence": [float(_wp(w).confidence) for w in self.sequence],
            "groups": list(self.groups),
            "angle": float(self.angle),
        }

    @classmethod
    def from_json(cls, data: dict) -> "RouteOrder":
        from .io import FormatError
        try:
            seq = data["sequence"]
            conf = data.get("confidence", [1.0] * len(seq))
            order = cls([Waypoint(float(x), float(y), float(c)) for (x, y), c in zip(seq, conf)],
                        [str(g) for g in data["groups"]], float(data.get("angle", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed route order: {exc}") from exc
        if len(order.groups) != len(order.sequence) or set(order.groups) - {"A", "B"}:
            raise FormatError("route order needs one A/B tag per waypoint")
        return order


def _corridor_slots(A: Cluster, B: Cluster, grid, tol: float):
    # walk both sorted groups and pair the two ends of each corridor
    slots, i, j = [], 0, 0
    while i < len(A) or j < len(B):
        if i < len(A) and j < len(B):
            pa, pb = A.projections[i], B.projections[j]
            if abs(pa - pb) <= tol and _crossings(grid, A.members[i], B.members[j]) == 0:
                slots.append((A.members[i], B.members[j]))
                i, j = i + 1, j + 1
            elif pa <= pb:
                slots.append((A.members[i], None))
                i += 1
            else:
                slots.append((None, B.members[j]))
                j += 1
        elif i < len(A):
            slots.append((A.members[i], None))
            i += 1
        else:
            slots.append((None, B.members[j]))
            j += 1
    return slots


def final_order(A: Cluster, B: Cluster, grid, angle: float = 0.0) -> RouteOrder:
    """A-B-B-A route over the corridors, starting at the low-projection end of A.

    Each corridor with a waypoint on both sides is crossed from the current
    side to the other one. A corridor whose end on the other side is missing
    is not crossed: the route stays on its side and continues there, and a
    lone waypoint on the far side is left out rather than reached by a hop
    through a row. Hops are checked against the rows they cross (one for a
    same-side hop between neighbouring corridors, none along a corridor);
    unexpected counts are recorded in ``violations``.
    """
    grid = _rowmap(grid)
    if len(A) == 0 or len(B) == 0:
        raise OrderingError("both field sides need at least one waypoint")
    tol = _spacing([A, B]) / 2
    slots = _corridor_slots(A, B, grid, tol)
    side = 0
    seq, tags = [], []
    names = ("A", "B")
    for slot in slots:
        here, there = slot[side], slot[1 - side]
        if here is None:
            if not seq and there is not None:
                # nothing on A before the first B end: start on B instead
                side = 1 - side
                here, there = there, None
            else:
                continue
        seq.append(here)
        tags.append(names[side])
        if there is not None:
            seq.append(there)
            tags.append(names[1 - side])
            side = 1 - side
    violations = []
    for n in range(len(seq) - 1):
        c = _crossings(grid, seq[n], seq[n + 1])
        expect = 1 if tags[n] == tags[n + 1] else 0
        if c != expect:
            violations.append((n, c))
    if violations:
        log.info("%d hop(s) cross an unexpected number of rows", len(violations))
    return RouteOrder(seq, tags, angle, violations)


# full ordering stage --------------------------------------------------------------

@dataclass(frozen=True)
class OrderParams:
    eps_factor: float = 2.5
    min_pts: int = 3
    d_c: float = 8.0
    hough: HoughParams = HoughParams()


def order_waypoints(waypoints, grid, params: OrderParams = OrderParams(), angle: float | None = None):
    """Cluster, refine, group and sequence waypoints on ``grid``."""
    grid = np.asarray(grid)
    rm = RowMap(grid)
    wps = [_wp(w) for w in waypoints]
    if not wps:
        raise OrderingError("no waypoints to order")
    if angle is None:
        angle, _ = estimate_angle(grid, params.hough)
    if len(wps) == 1:
        return RouteOrder(wps, ["A"], angle)
    _, clusters, noise = dbscan(wps, default_eps(wps, params.eps_factor), params.min_pts)
    spacing = row_spacing(grid, angle)
    parts = []
    for c in clusters:
        parts += split_mixed(project_and_sort(Cluster([wps[i] for i in c]), angle), angle, spacing)
    sorted_clusters = [refine_cluster(c, rm, angle, params.d_c, spacing) for c in parts]
    A, B = merge_into_groups([c.members for c in sorted_clusters], [wps[i] for i in noise],
                             angle, rm, params.d_c, spacing)
    return final_order(A, B, rm, angle)
