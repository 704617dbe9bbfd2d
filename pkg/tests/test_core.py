import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepway.core import _supercover
from deepway.core import (BoundsError, as_grid, count_risings, line_pixels, normalize_angle,
                          raster_line, segment_row_crossings)


def clip_interval(a, b, r, c):
    """Parameter interval [t0, t1] of segment a->b inside the closed square of pixel (r, c)."""
    t0, t1 = 0.0, 1.0
    for p0, d, lo, hi in ((a[0], b[0] - a[0], c - 0.5, c + 0.5),
                          (a[1], b[1] - a[1], r - 0.5, r + 0.5)):
        if d == 0:
            if p0 < lo or p0 > hi:
                return None
            continue
        u0, u1 = (lo - p0) / d, (hi - p0) / d
        if u0 > u1:
            u0, u1 = u1, u0
        t0, t1 = max(t0, u0), min(t1, u1)
        if t0 > t1:
            return None
    return t0, t1


def brute_touched(shape, a, b):
    h, w = shape
    out = {}
    for r in range(h):
        for c in range(w):
            iv = clip_interval(a, b, r, c)
            if iv is not None:
                out[(r, c)] = iv
    return out


def ideal_runs(grid, a, b):
    """Connected components of the t-intervals the segment spends in occupied pixels."""
    ivs = sorted(iv for (r, c), iv in brute_touched(grid.shape, a, b).items() if grid[r, c])
    runs, end = 0, -math.inf
    for t0, t1 in ivs:
        if t0 > end + 1e-12:
            runs += 1
        end = max(end, t1)
    return runs


def test_empty_grid_samples_are_zero():
    g = np.zeros((12, 9), np.uint8)
    assert not raster_line(g, (0.3, 0.2), (8.1, 11.2)).any()


def test_degenerate_segment_single_sample():
    g = np.zeros((5, 5), np.uint8)
    g[2, 3] = 1
    s = raster_line(g, (3, 2), (3, 2))
    assert s.tolist() == [1]


def test_column_crossed_once():
    g = np.zeros((10, 10), np.uint8)
    g[:, 5] = 1
    s = raster_line(g, (0, 5), (9, 5))
    expected = [int(c == 5) for c in range(10)]
    assert s.tolist() == expected
    assert count_risings(s) == 1


def test_out_of_bounds_raises():
    g = np.zeros((4, 4), np.uint8)
    with pytest.raises(BoundsError):
        raster_line(g, (0, 0), (4.0, 1))
    with pytest.raises(BoundsError):
        raster_line(g, (-0.6, 0), (1, 1))


@pytest.mark.parametrize("samples, expected", [
    ([0, 0, 1, 1, 0, 1], 2),
    ([0, 0, 0], 0),
    ([1, 0, 1], 2),
    ([1], 1),
])
def test_count_risings(samples, expected):
    assert count_risings(samples) == expected


def test_count_risings_empty():
    with pytest.raises(ValueError):
        count_risings([])


def test_crossings_free_space():
    g = np.zeros((20, 20), np.uint8)
    g[10:12, :] = 1
    assert segment_row_crossings(g, (2, 2), (18, 6)) == 0


def test_crossings_one_and_three_rows():
    g = np.zeros((30, 30), np.uint8)
    g[10:12, :] = 1
    assert segment_row_crossings(g, (5, 3), (5, 25)) == 1
    g[16:18, :] = 1
    g[22:24, :] = 1
    assert segment_row_crossings(g, (5, 3), (7, 28)) == 3


def test_diagonal_through_corners_counts_column_once():
    g = np.zeros((10, 10), np.uint8)
    g[:, 5] = 1
    assert segment_row_crossings(g, (0, 0), (9, 9)) == 1


def test_normalize_angle():
    assert normalize_angle(math.pi / 2) == pytest.approx(math.pi / 2)
    assert normalize_angle(-math.pi / 2) == pytest.approx(math.pi / 2)
    assert normalize_angle(math.pi / 4 + math.pi) == pytest.approx(math.pi / 4)
    assert normalize_angle(-3 * math.pi / 4) == pytest.approx(math.pi / 4)


def test_as_grid_rejects_non_binary():
    with pytest.raises(ValueError):
        as_grid([[0, 2]])
    g = as_grid([[0, 1]])
    assert not g.flags.writeable


coord = st.floats(min_value=-0.5, max_value=15.49, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(coord, coord, coord, coord)
def test_reversal_visits_same_pixels(ax, ay, bx, by):
    fwd = line_pixels((ax, ay), (bx, by), (16, 16))
    bwd = line_pixels((bx, by), (ax, ay), (16, 16))
    assert fwd.tolist() == bwd[::-1].tolist()
    g = np.random.default_rng(0).integers(0, 2, (16, 16))
    assert segment_row_crossings(g, (ax, ay), (bx, by)) == segment_row_crossings(g, (bx, by), (ax, ay))


@settings(max_examples=300, deadline=None)
@given(coord, coord, coord, coord)
def test_pixels_visited_once_and_connected(ax, ay, bx, by):
    pix = line_pixels((ax, ay), (bx, by), (16, 16))
    assert len({tuple(p) for p in pix}) == len(pix)
    steps = np.abs(np.diff(pix, axis=0)).sum(axis=1)
    assert np.all(steps <= 2)


def test_supercover_matches_exhaustive_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(400):
        n = int(rng.integers(2, 33))
        shape = (n, int(rng.integers(2, 33)))
        a = rng.uniform(-0.5, np.array(shape[::-1]) - 0.5 - 1e-9)
        b = rng.uniform(-0.5, np.array(shape[::-1]) - 0.5 - 1e-9)
        touched = brute_touched(shape, a, b)
        # drop pixels touched only at a single point of a boundary
        solid = {p for p, (t0, t1) in touched.items() if t1 - t0 > 1e-9}
        got = {tuple(p) for p in line_pixels(a, b, shape)}
        assert solid <= got <= set(touched)
        ordered = sorted(solid, key=lambda p: touched[p])
        assert [p for p in map(tuple, line_pixels(a, b, shape)) if p in solid] == ordered


def test_crossings_bounded_by_ideal_segment_runs():
    rng = np.random.default_rng(5)
    for _ in range(300):
        shape = (int(rng.integers(2, 33)), int(rng.integers(2, 33)))
        g = (rng.random(shape) < rng.uniform(0.1, 0.6)).astype(np.uint8)
        a = rng.uniform(-0.5, np.array(shape[::-1]) - 0.5 - 1e-9)
        b = rng.uniform(-0.5, np.array(shape[::-1]) - 0.5 - 1e-9)
        got = segment_row_crossings(g, a, b)
        assert 0 <= got <= ideal_runs(g, a, b)


def test_corner_passes_bounded_by_ideal_runs():
    # integer endpoints on 45 degree lines hit pixel corners exactly
    rng = np.random.default_rng(6)
    for _ in range(300):
        g = (rng.random((12, 12)) < 0.4).astype(np.uint8)
        x0, y0 = rng.integers(0, 6, 2)
        d = int(rng.integers(1, 6))
        sx, sy = rng.choice([-1, 1], 2)
        a = (float(x0 + 6 * (sx < 0)), float(y0 + 6 * (sy < 0)))
        b = (a[0] + sx * d, a[1] + sy * d)
        assert segment_row_crossings(g, a, b) <= ideal_runs(g, a, b)


CORNER_EPS = 1e-9


def stepwise_supercover(x0, y0, x1, y1):
    # grid traversal on pixel squares; shift so pixel c spans [c, c + 1)
    ux0, uy0, ux1, uy1 = x0 + 0.5, y0 + 0.5, x1 + 0.5, y1 + 0.5
    i, j = math.floor(ux0), math.floor(uy0)
    nx = abs(math.floor(ux1) - i)
    ny = abs(math.floor(uy1) - j)
    dx, dy = ux1 - ux0, uy1 - uy0
    si = 1 if dx > 0 else -1
    sj = 1 if dy > 0 else -1
    if dx != 0:
        tdx = 1.0 / abs(dx)
        tmx = ((i + 1 - ux0) if dx > 0 else (ux0 - i)) * tdx
    else:
        tdx = tmx = math.inf
    if dy != 0:
        tdy = 1.0 / abs(dy)
        tmy = ((j + 1 - uy0) if dy > 0 else (uy0 - j)) * tdy
    else:
        tdy = tmy = math.inf

    cols = [i]
    rows = [j]
    steps = [0]
    k = 0
    while nx or ny:
        k += 1
        if nx and ny and abs(tmx - tmy) <= CORNER_EPS:
            # exact corner: the segment touches both side pixels at the same point
            cols += (i + si, i)
            rows += (j, j + sj)
            steps += (k, k)
            k += 1
            i += si
            j += sj
            tmx += tdx
            tmy += tdy
            nx -= 1
            ny -= 1
        elif ny == 0 or (nx and tmx < tmy):
            i += si
            tmx += tdx
            nx -= 1
        else:
            j += sj
            tmy += tdy
            ny -= 1
        cols.append(i)
        rows.append(j)
        steps.append(k)
    return cols, rows, steps


def test_vectorised_traversal_matches_stepwise():
    rng = np.random.default_rng(11)
    # random reals, integer and half-integer endpoints (exact corners), long lines
    for n in range(3000):
        kind = n % 4
        if kind == 0:
            a, b = rng.uniform(-0.5, 40, 2), rng.uniform(-0.5, 40, 2)
        elif kind == 1:
            a, b = rng.integers(0, 30, 2).astype(float), rng.integers(0, 30, 2).astype(float)
        elif kind == 2:
            a, b = rng.integers(0, 30, 2) + 0.5, rng.integers(0, 30, 2) + 0.5
        else:
            a, b = rng.uniform(0, 800, 2), rng.uniform(0, 800, 2)
        got = [np.asarray(v).tolist() for v in _supercover(a[0], a[1], b[0], b[1])]
        want = [list(v) for v in stepwise_supercover(a[0], a[1], b[0], b[1])]
        assert got == want, (a, b)
