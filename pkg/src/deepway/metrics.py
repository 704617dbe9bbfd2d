"""Waypoint detection metrics (matched AP over a confidence sweep) and the
row coverage score of a planned path."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import DeepWayError, Waypoint, clip_point, points_array
from .decode import suppress
from .order import RowMap, line_in_grid

log = logging.getLogger(__name__)


class UndefinedRecallError(DeepWayError, ValueError):
    """Recall needs at least one ground-truth waypoint."""


class AlignmentError(DeepWayError, ValueError):
    """Plan legs do not line up with the route order."""


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    matches: list = field(default_factory=list)  # (pred index, truth index, distance)


def _as_waypoints(pred):
    return [w if isinstance(w, Waypoint) else Waypoint(*map(float, w)) for w in pred]


def match_waypoints(pred, truth, r_c: float) -> MatchResult:
    """Greedy one-to-one matching of predictions to truth points.

    Predictions are taken in descending confidence (input order on ties); each
    claims the nearest unmatched truth at distance <= ``r_c`` and is a false
    positive otherwise. Equal distances go to the truth with the smaller
    (x, y), which keeps the counts independent of truth order.
    """
    if not r_c > 0:
        raise ValueError(f"r_c must be positive, got {r_c}")
    pred = _as_waypoints(pred)
    t = points_array(truth).reshape(-1, 2)
    if not pred:
        return MatchResult(0, 0, len(t), [])
    p = np.array([(w.x, w.y) for w in pred], dtype=float)
    conf = np.array([w.confidence for w in pred], dtype=float)
    order = np.argsort(-conf, kind="stable")
    dist = np.hypot(p[:, None, 0] - t[None, :, 0], p[:, None, 1] - t[None, :, 1])
    free = np.ones(len(t), dtype=bool)
    rank = np.empty(len(t), dtype=int)
    rank[np.lexsort((t[:, 1], t[:, 0]))] = np.arange(len(t))
    matches = []
    for n in order:
        ok = np.flatnonzero(free & (dist[n] <= r_c))
        if ok.size:
            near = ok[dist[n, ok] == dist[n, ok].min()]
            j = int(near[np.argmin(rank[near])])
            free[j] = False
            matches.append((int(n), j, float(dist[n, j])))
    tp = len(matches)
    return MatchResult(tp, len(pred) - tp, len(t) - tp, matches)


@dataclass
class APResult:
    ap: float
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def curve(self) -> list[dict]:
        return [dict(t_c=float(t), precision=float(p), recall=float(r))
                for t, p, r in zip(self.thresholds, self.precision, self.recall)]


def interpolated_area(precision, recall) -> float:
    """Area under a PR sweep ordered by increasing threshold.

    Recall must be non-increasing along the sweep; precision is replaced by
    its running maximum towards higher recall, and the last point closes the
    curve at recall 0.
    """
    precision = np.asarray(precision, dtype=float)
    recall = np.asarray(recall, dtype=float)
    p_interp = np.maximum.accumulate(precision)
    r_next = np.append(recall[1:], 0.0)
    return float(np.sum((recall - r_next) * p_interp))


def thresholds_for(step: float = 0.1) -> np.ndarray:
    n = int(round(1.0 / step))
    if not np.isclose(n * step, 1.0):
        raise ValueError(f"step must divide 1, got {step}")
    return np.round(np.arange(n + 1) * step, 12)


def _sweep(images, r_c, d_c, thresholds):
    counts = np.zeros((len(thresholds), len(images), 3), dtype=np.int64)
    for i, (pred, truth) in enumerate(images):
        pred = _as_waypoints(pred)
        for k, t in enumerate(thresholds):
            kept = suppress([w for w in pred if w.confidence > t], d_c)
            m = match_waypoints(kept, truth, r_c)
            counts[k, i] = m.tp, m.fp, m.fn
    return counts


def _pr(tp, fp, fn):
    npred = tp + fp
    precision = np.divide(tp, npred, out=np.zeros(tp.shape), where=npred > 0)
    recall = tp / (tp + fn)
    return precision, recall


def average_precision(images, r_c: float, d_c: float = 8.0, step: float = 0.1,
                      aggregate: str = "micro") -> APResult:
    """AP over a sweep of confidence thresholds ``0, step, ..., 1``.

    ``images`` is a sequence of ``(predictions, truths)`` pairs. At each
    threshold predictions with confidence strictly above it are suppressed
    with ``d_c`` and matched at radius ``r_c``. ``micro`` pools the counts over
    all images; ``macro`` averages per-image AP. With no predictions at a
    threshold precision counts as 0.
    """
    images = list(images)
    if not images:
        raise ValueError("need at least one image")
    if aggregate not in ("micro", "macro"):
        raise ValueError(f"aggregate must be 'micro' or 'macro', got {aggregate!r}")
    n_truth = [len(points_array(t).reshape(-1, 2)) for _, t in images]
    if sum(n_truth) == 0 or (aggregate == "macro" and min(n_truth) == 0):
        raise UndefinedRecallError("recall is undefined without ground-truth waypoints")
    thresholds = thresholds_for(step)
    counts = _sweep(images, r_c, d_c, thresholds)
    tp, fp, fn = (counts.sum(axis=1)[:, c] for c in range(3))
    precision, recall = _pr(tp, fp, fn)
    if aggregate == "micro":
        ap = interpolated_area(precision, recall)
    else:
        ap = float(np.mean([interpolated_area(*_pr(*counts[:, i].T)) for i in range(len(images))]))
    return APResult(ap, thresholds, precision, recall, tp, fp, fn)


# coverage ---------------------------------------------------------------------

N_SAMPLES = 4


@dataclass
class RowVerdict:
    traversals: tuple  # indices of the traversals on either side; None marks the field edge
    crossings: list
    label: int | None  # row component met by the single-crossing segments
    covered: bool
    reason: str = ""

    def to_json(self) -> dict:
        return {"traversals": list(self.traversals), "crossings": list(self.crossings),
                "label": self.label, "covered": self.covered, "reason": self.reason}


@dataclass
class CoverageReport:
    covered_rows: int
    total_rows: int
    verdicts: list = field(default_factory=list)

    @property
    def score(self) -> float:
        return self.covered_rows / self.total_rows

    def to_json(self) -> dict:
        return {"covered_rows": self.covered_rows, "total_rows": self.total_rows,
                "score": self.score, "verdicts": [v.to_json() for v in self.verdicts]}


def sample_path(pixels, n: int = N_SAMPLES) -> np.ndarray:
    """``n`` points equally spaced by arc length strictly inside a pixel path."""
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    arc = np.concatenate(([0.0], np.cumsum(np.hypot(*np.diff(pix, axis=0).T))))
    s = arc[-1] * np.arange(1, n + 1) / (n + 1)
    return np.column_stack((np.interp(s, arc, pix[:, 0]), np.interp(s, arc, pix[:, 1])))


def _judge(rm, ps, qs, sides):
    crossings, labels = [], []
    for p, q in zip(ps, qs):
        runs = rm.runs(p, q)
        crossings.append(len(runs))
        if len(runs) == 1:
            labels.append(runs[0][0])
    ok = 1 in crossings and max(crossings) < 2
    label = max(set(labels), key=labels.count) if labels else None
    reason = "" if ok else ("crosses several rows" if max(crossings) >= 2 else "no row crossed")
    return RowVerdict(sides, crossings, label, ok, reason)


def _outward(shape, ps, direction):
    # probe from each point to the image border
    return [line_in_grid(shape, p, direction)[1] for p in ps]


def estimate_total_rows(grid, angle: float) -> int:
    """Rows met by the line across the rows through the centroid of the occupied pixels."""
    rm = RowMap(grid)
    ys, xs = np.nonzero(rm.occ)
    if not len(xs):
        return 0
    ends = line_in_grid(rm.shape, (xs.mean(), ys.mean()), (-math.sin(angle), math.cos(angle)))
    return rm.crossings(*ends) if ends is not None else 0


def coverage_score(grid, plan, order, total_rows: int) -> CoverageReport:
    """Fraction of rows covered by a planned path.

    Traversals are the plan legs that change group (one per corridor). The row
    between two consecutive traversals is judged on segments joining four
    equally spaced points of each: it is covered when some segment crosses
    exactly one row and none crosses two or more. The two outer rows are
    judged on probes from the first and last traversal outwards across the rows
    to the image border, so a skipped edge corridor leaves two rows on one
    probe. A row judged covered more than once counts as not covered.
    """
    if total_rows < 1:
        raise ValueError(f"total_rows must be >= 1, got {total_rows}")
    if len(plan.legs) != max(len(order.sequence) - 1, 0):
        raise AlignmentError(f"plan has {len(plan.legs)} legs for {len(order.sequence)} waypoints")
    rm = RowMap(grid)
    trav = []
    for i in order.corridor_breaks:
        leg = plan.leg(i).astype(float)
        pts = sample_path(leg)
        if trav and np.dot(leg[-1] - leg[0], trav[-1][1]) < 0:
            pts = pts[::-1]
            d = leg[0] - leg[-1]
        else:
            d = leg[-1] - leg[0]
        trav.append((pts, d))
    verdicts = []
    if trav:
        n = np.array([-math.sin(order.angle), math.cos(order.angle)])
        first, last = trav[0][0], trav[-1][0]
        # outer rows: look away from the neighbouring traversal
        sign = 1.0 if len(trav) < 2 else float(np.sign(np.dot(last.mean(0) - first.mean(0), n)) or 1.0)
        verdicts.append(_judge(rm, first, _outward(rm.shape, first, -sign * n), (None, 0)))
        for k in range(len(trav) - 1):
            verdicts.append(_judge(rm, trav[k][0], trav[k + 1][0], (k, k + 1)))
        verdicts.append(_judge(rm, last, _outward(rm.shape, last, sign * n), (len(trav) - 1, None)))
    seen = {}
    for v in verdicts:
        if v.covered:
            seen.setdefault(v.label, []).append(v)
    for group in seen.values():
        if len(group) > 1:
            for v in group:
                v.covered, v.reason = False, "row covered more than once"
    covered = sum(v.covered for v in verdicts)
    if covered > total_rows:
        log.warning("%d rows judged covered but total_rows is %d", covered, total_rows)
        covered = total_rows
    return CoverageReport(covered, int(total_rows), verdicts)
