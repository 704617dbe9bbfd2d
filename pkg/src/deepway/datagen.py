"""Seeded generator of synthetic row-crop occupancy grids with ground-truth waypoints.

A field is a set of N straight rows at a common angle whose ends lie on two
randomly tilted border lines. Waypoints sit inside the field, one per
inter-row corridor on each of the two border sides.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DeepWayError, DegenerateGeometryError, Point, normalize_angle
from .io import FormatError, read_json, read_mask, write_json, write_mask

log = logging.getLogger(__name__)

PRNG_NAME = "PCG64"
MANIFEST_FORMAT = "deepway-dataset"
MANIFEST_VERSION = 1

# row counts the defaults are expressed for (800 px images)
_REFERENCE_SIZE = 800
_REFERENCE_ROWS = (20, 50)


class InfeasibleParametersError(DeepWayError, ValueError):
    """Parameters cannot produce a valid field."""


class StorageError(DeepWayError, OSError):
    """Dataset files could not be written."""


@dataclass(frozen=True)
class FieldParams:
    """Knobs of the synthetic field generator. Lengths are in pixels.

    ``inter_row_distance`` and ``border_jitter`` default to values derived from
    the image size (see :attr:`spacing` and :attr:`end_jitter`).
    """

    image_size: int = 800
    n_rows_min: int = 20
    n_rows_max: int = 50
    angle_range: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    inter_row_distance: float | None = None
    inter_row_jitter: float = 0.2
    row_radius_choices: tuple[int, ...] = (1, 2)
    hole_probability: float = 0.01
    rescale_range: tuple[float, float] = (0.75, 1.25)
    border_jitter: float | None = None
    border_tilt: float = math.pi / 6
    row_angle_jitter: float = 0.1
    margin: float = 4.0

    def __post_init__(self):
        if self.image_size < 16:
            raise InfeasibleParametersError("image_size must be at least 16")
        if self.n_rows_min < 2 or self.n_rows_max < self.n_rows_min:
            raise InfeasibleParametersError("need 2 <= n_rows_min <= n_rows_max")
        if not 0 <= self.hole_probability < 1:
            raise InfeasibleParametersError("hole_probability must be in [0, 1)")
        lo, hi = self.rescale_range
        if not 0 < lo <= hi:
            raise InfeasibleParametersError("rescale bounds must be positive and ordered")
        if self.angle_range[0] > self.angle_range[1]:
            raise InfeasibleParametersError("angle_range must be ordered")
        if not self.row_radius_choices or min(self.row_radius_choices) < 1:
            raise InfeasibleParametersError("row radii must be positive")
        if not 0 <= self.inter_row_jitter < 1:
            raise InfeasibleParametersError("inter_row_jitter must be in [0, 1)")
        if self.inter_row_distance is not None and self.inter_row_distance <= 0:
            raise InfeasibleParametersError("inter_row_distance must be positive")
        if self.spacing * self.n_rows_max > math.sqrt(2) * self.image_size:
            raise InfeasibleParametersError(
                f"{self.n_rows_max} rows at {self.spacing:.1f} px spacing exceed the image diagonal")
        # narrowest corridor must keep free pixels between two rows of the widest radius
        narrowest = self.spacing * (1 - self.inter_row_jitter) * lo
        if narrowest < 2 * max(self.row_radius_choices) + 2.5:
            raise InfeasibleParametersError(
                f"narrowest corridor {narrowest:.1f} px leaves no free space between rows")

    @property
    def spacing(self) -> float:
        if self.inter_row_distance is not None:
            return float(self.inter_row_distance)
        return self.image_size / (self.n_rows_max + 4)

    @property
    def end_jitter(self) -> float:
        if self.border_jitter is not None:
            return float(self.border_jitter)
        return 0.3 * self.spacing

    @classmethod
    def scaled(cls, image_size: int, **overrides) -> "FieldParams":
        """Defaults for another image size, keeping the 800 px row geometry in pixels.

        Row counts shrink in proportion to the image side so that the spacing,
        row width and waypoint density per cell stay what they are at 800 px.
        """
        f = image_size / _REFERENCE_SIZE
        n_min = max(2, round(_REFERENCE_ROWS[0] * f))
        n_max = max(n_min, round(_REFERENCE_ROWS[1] * f))
        kw = dict(image_size=image_size, n_rows_min=n_min, n_rows_max=n_max)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["angle_range"] = list(self.angle_range)
        d["row_radius_choices"] = list(self.row_radius_choices)
        d["rescale_range"] = list(self.rescale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FieldParams":
        d = dict(d)
        for key in ("angle_range", "row_radius_choices", "rescale_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class FieldTruth:
    grid: np.ndarray
    rows: list[tuple[Point, Point, Point]]
    waypoints_a: list[Point]
    waypoints_b: list[Point]
    angle: float
    seed: int = 0
    radius: int = field(default=1, compare=False)

    def to_json(self) -> dict:
        return {
            "angle": float(self.angle),
            "rows": [[s.x, s.y, e.x, e.y] for s, e, _ in self.rows],
            "waypoints_a": [[p.x, p.y] for p in self.waypoints_a],
            "waypoints_b": [[p.x, p.y] for p in self.waypoints_b],
            "seed": int(self.seed),
        }

    @classmethod
    def from_json(cls, data: dict, grid: np.ndarray) -> "FieldTruth":
        try:
            rows = []
            for x0, y0, x1, y1 in data["rows"]:
                s, e = Point(float(x0), float(y0)), Point(float(x1), float(y1))
                rows.append((s, e, Point((s.x + e.x) / 2, (s.y + e.y) / 2)))
            return cls(
                grid=grid,
                rows=rows,
                waypoints_a=[Point(float(x), float(y)) for x, y in data["waypoints_a"]],
                waypoints_b=[Point(float(x), float(y)) for x, y in data["waypoints_b"]],
                angle=float(data["angle"]),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed truth record: {exc}") from exc

    @property
    def waypoints(self) -> list[Point]:
        return list(self.waypoints_a) + list(self.waypoints_b)

    @property
    def n_rows(self) -> int:
        return len(self.rows)


def gt_waypoint(end_i, end_j, dir_i: float, dir_j: float) -> Point:
    """Waypoint between two adjacent row extremities.

    The point lies on the circle centred on the midpoint of the extremities,
    with radius half their distance, in the direction of the mean of the two
    inward row directions ``dir_i`` and ``dir_j`` (radians).
    """
    xi, yi = float(end_i[0]), float(end_i[1])
    xj, yj = float(end_j[0]), float(end_j[1])
    radius = 0.5 * math.hypot(xj - xi, yj - yi)
    if radius <= 1e-12:
        raise DegenerateGeometryError("coincident row extremities")
    sx = math.cos(dir_i) + math.cos(dir_j)
    sy = math.sin(dir_i) + math.sin(dir_j)
    norm = math.hypot(sx, sy)
    if norm <= 1e-12:
        raise DegenerateGeometryError("opposite row directions have no mean angle")
    return Point((xi + xj) / 2 + radius * sx / norm, (yi + yj) / 2 + radius * sy / norm)


def draw_row(grid: np.ndarray, a, b, radius: float) -> None:
    """Set every pixel whose centre is within ``radius`` of segment a-b (a union of discs)."""
    h, w = grid.shape
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    c0 = max(0, int(math.floor(min(ax, bx) - radius)))
    c1 = min(w, int(math.ceil(max(ax, bx) + radius)) + 1)
    r0 = max(0, int(math.floor(min(ay, by) - radius)))
    r1 = min(h, int(math.ceil(max(ay, by) + radius)) + 1)
    if c0 >= c1 or r0 >= r1:
        return
    ys, xs = np.mgrid[r0:r1, c0:c1].astype(float)
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        t = np.zeros_like(xs)
    else:
        t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / L2, 0.0, 1.0)
    d2 = (xs - ax - t * dx) ** 2 + (ys - ay - t * dy) ** 2
    grid[r0:r1, c0:c1] |= (d2 <= radius * radius + 1e-9).astype(np.uint8)


def _intersect(p, u, q, v):
    """Parameter t with p + t*u on the line q + s*v."""
    det = u[0] * (-v[1]) + v[0] * u[1]
    if abs(det) < 1e-12:
        raise DegenerateGeometryError("row parallel to field border")
    rx, ry = q[0] - p[0], q[1] - p[1]
    return (rx * (-v[1]) + v[0] * ry) / det


def _draw_field(rng: np.random.Generator, params: FieldParams):
    size = params.image_size
    centre = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    n_rows = int(rng.integers(params.n_rows_min, params.n_rows_max + 1))
    alpha = normalize_angle(float(rng.uniform(*params.angle_range)))
    scale = float(rng.uniform(*params.rescale_range))
    radius = int(rng.choice(np.asarray(params.row_radius_choices)))

    jit = params.inter_row_jitter
    reach = size / 2.0 - params.margin  # fields stay inside this disc
    base_half = (n_rows - 1) / 2 * params.spacing + jit * params.spacing / 2 + radius + 1
    # rescaling cannot push the outer rows past 85% of the disc
    scale = min(scale, 0.85 * reach / base_half)
    d = params.spacing * scale
    half_span = base_half * scale
    field_r = min(reach, max(reach * min(1.0, scale), half_span / 0.85))

    u = np.array([math.cos(alpha), math.sin(alpha)])
    n = np.array([-math.sin(alpha), math.cos(alpha)])
    offsets = (np.arange(n_rows) - (n_rows - 1) / 2) * d
    offsets = offsets + rng.uniform(-jit * d / 2, jit * d / 2, n_rows)
    # per-row angle noise drifts a row end by at most row_angle_jitter * d
    max_dev = math.atan2(params.row_angle_jitter * d, field_r)
    row_angles = alpha + rng.uniform(-max_dev, max_dev, n_rows)

    end_jit = params.end_jitter * scale
    avail = math.sqrt(max(field_r**2 - half_span**2, 0.0))
    tilt_cap = math.atan2(max(0.75 * avail - end_jit, 0.0), half_span)
    tilts = rng.uniform(-1, 1, 2) * min(params.border_tilt, tilt_cap)
    lengths = rng.uniform(0.55, 0.95, 2)
    ends_jitter = rng.uniform(-end_jit, end_jit, (n_rows, 2))

    rows = []
    for side in range(2):
        lengths[side] *= max(avail - half_span * abs(math.tan(tilts[side])) - end_jit, 1.0)
    for i in range(n_rows):
        c = centre + offsets[i] * n
        ui = np.array([math.cos(row_angles[i]), math.sin(row_angles[i])])
        ts = []
        for side in range(2):
            sign = -1.0 if side == 0 else 1.0
            v = np.array([-math.sin(alpha + tilts[side]), math.cos(alpha + tilts[side])])
            q = centre + sign * lengths[side] * u
            t = _intersect(c, ui, q, v) + ends_jitter[i, side]
            # keep the extremity inside the field disc
            lim = math.sqrt(max(field_r**2 - offsets[i] ** 2, 1.0))
            ts.append(float(np.clip(t, -lim, lim)))
        start, end = c + ts[0] * ui, c + ts[1] * ui
        rows.append((Point(*start), Point(*end), Point(*((start + end) / 2)), float(row_angles[i])))

    grid = np.zeros((size, size), np.uint8)
    for start, end, _, _ in rows:
        draw_row(grid, start, end, radius)

    p = params.hole_probability
    if p > 0:
        knock = rng.random(grid.shape) < p
        grid[knock] = 0
        occ = np.argwhere(grid)
        for _ in range(int(rng.integers(0, 4))):
            if len(occ) == 0:
                break
            r, c = occ[int(rng.integers(len(occ)))]
            hh, ww = rng.integers(3, 11, 2)
            grid[max(0, r - hh // 2):r - hh // 2 + hh, max(0, c - ww // 2):c - ww // 2 + ww] = 0

    wps = []
    for side in range(2):
        pts = []
        for i in range(n_rows - 1):
            e_i = rows[i][side]
            e_j = rows[i + 1][side]
            inward = 0.0 if side == 0 else math.pi
            pts.append(gt_waypoint(e_i, e_j, rows[i][3] + inward, rows[i + 1][3] + inward))
        wps.append(pts)
    return grid, rows, wps, alpha, radius


def _valid(grid, rows, wps, min_length) -> bool:
    h, w = grid.shape
    # rows shorter than this leave the two waypoints of a corridor on top of each other
    if any(math.dist(a, b) < min_length for a, b, _, _ in rows):
        return False
    for pts in wps:
        for x, y in pts:
            if not (0.5 <= x <= w - 1.5 and 0.5 <= y <= h - 1.5):
                return False
            if grid[int(round(y)), int(round(x))]:
                return False
    return True


def generate_field(seed: int, params: FieldParams = FieldParams(), max_attempts: int = 50) -> FieldTruth:
    """Generate one synthetic field. Equal (seed, params) give bit-identical output."""
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    for _ in range(max_attempts):
        grid, rows, wps, alpha, radius = _draw_field(rng, params)
        if _valid(grid, rows, wps, 2 * params.spacing):
            grid.flags.writeable = False
            return FieldTruth(
                grid=grid,
                rows=[(s, e, c) for s, e, c, _ in rows],
                waypoints_a=wps[0],
                waypoints_b=wps[1],
                angle=alpha,
                seed=int(seed),
                radius=radius,
            )
    raise InfeasibleParametersError(f"no valid field after {max_attempts} attempts (seed {seed})")


def derive_seed(master_seed: int, index: int) -> int:
    """Per-image seed; any image is regenerable from (master_seed, index) alone."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _item_names(index: int) -> tuple[str, str]:
    return f"mask_{index:05d}.png", f"truth_{index:05d}.json"


def _write_item(args):
    index, seed, params, dest = args
    truth = generate_field(seed, params)
    mask_name, truth_name = _item_names(index)
    write_mask(dest / mask_name, truth.grid)
    write_json(dest / truth_name, truth.to_json())
    return {"index": index, "seed": seed, "mask": mask_name, "truth": truth_name,
            "n_rows": truth.n_rows}


def generate_dataset(seed: int, count: int, params: FieldParams, destination,
                     workers: int = 1) -> dict:
    """Write ``count`` mask/truth pairs plus ``manifest.json`` into ``destination``."""
    dest = Path(destination)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        jobs = [(i, derive_seed(seed, i), params, dest) for i in range(count)]
        if workers > 1 and count > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                items = list(pool.map(_write_item, jobs))
        else:
            items = [_write_item(job) for job in jobs]
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "prng": PRNG_NAME,
            "seed": int(seed),
            "count": int(count),
            "params": params.to_dict(),
            "items": items,
        }
        write_json(dest / "manifest.json", manifest)
    except OSError as exc:
        raise StorageError(f"cannot write dataset to {dest}: {exc}") from exc
    log.info("wrote %d fields to %s", count, dest)
    return manifest


class Dataset:
    """Read access to a generated (or externally assembled) dataset manifest."""

    def __init__(self, manifest_path):
        self.path = Path(manifest_path)
        if self.path.is_dir():
            self.path = self.path / "manifest.json"
        self.root = self.path.parent
        self.manifest = read_json(self.path)
        if self.manifest.get("format") != MANIFEST_FORMAT:
            raise FormatError(f"{self.path} is not a dataset manifest")
        self.items = self.manifest["items"]

    def __len__(self):
        return len(self.items)

    @property
    def params(self) -> FieldParams:
        return FieldParams.from_dict(self.manifest["params"])

    def mask(self, i: int) -> np.ndarray:
        return read_mask(self.root / self.items[i]["mask"])

    def truth(self, i: int) -> FieldTruth:
        grid = self.mask(i)
        return FieldTruth.from_json(read_json(self.root / self.items[i]["truth"]), grid)
