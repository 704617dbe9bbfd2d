import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepway.core import Point, Waypoint
from deepway.metrics import (UndefinedRecallError, average_precision, interpolated_area,
                             match_waypoints, thresholds_for)


def greedy_reference(pred, truth, r_c):
    # plain-python replay of the greedy order
    order = sorted(range(len(pred)), key=lambda n: (-pred[n].confidence, n))
    used = set()
    tp = 0
    for n in order:
        best = None
        for j, t in enumerate(truth):
            if j in used:
                continue
            d = math.dist(pred[n][:2], t)
            if d <= r_c and (best is None or (d, t) < best[:2]):
                best = (d, t, j)
        if best is not None:
            used.add(best[2])
            tp += 1
    return tp, len(pred) - tp, len(truth) - tp


def test_exact_predictions():
    truth = [Point(3, 4), Point(10, 10), Point(40, 2)]
    m = match_waypoints([Waypoint(p.x, p.y, 0.9) for p in truth], truth, 2.0)
    assert (m.tp, m.fp, m.fn) == (3, 0, 0)


def test_two_predictions_one_truth():
    m = match_waypoints([Waypoint(0, 1, 0.8), Waypoint(1, 0, 0.9)], [Point(0, 0)], 3.0)
    assert (m.tp, m.fp, m.fn) == (1, 1, 0)
    # the more confident prediction takes it
    assert m.matches[0][0] == 1


def test_radius_is_inclusive_and_positive():
    assert match_waypoints([Waypoint(3, 4, 1)], [Point(0, 0)], 5.0).tp == 1
    assert match_waypoints([Waypoint(3, 4, 1)], [Point(0, 0)], 4.999).tp == 0
    with pytest.raises(ValueError):
        match_waypoints([], [], 0.0)


def test_empty_inputs():
    assert (lambda m: (m.tp, m.fp, m.fn))(match_waypoints([], [Point(1, 1)], 1)) == (0, 0, 1)
    assert (lambda m: (m.tp, m.fp, m.fn))(match_waypoints([Waypoint(1, 1, 1)], [], 1)) == (0, 1, 0)


def random_instance(rng, n_max=10):
    npred, ntruth = rng.integers(0, n_max + 1, 2)
    # coarse integer coordinates so distance ties actually occur
    pred = [Waypoint(float(x), float(y), float(c)) for x, y, c in
            zip(rng.integers(0, 12, npred), rng.integers(0, 12, npred), rng.choice([0.3, 0.6, 0.9], npred))]
    truth = [Point(float(x), float(y)) for x, y in zip(rng.integers(0, 12, ntruth), rng.integers(0, 12, ntruth))]
    return pred, truth


def test_matches_brute_force_greedy():
    rng = np.random.default_rng(5)
    for _ in range(500):
        pred, truth = random_instance(rng)
        r_c = float(rng.choice([1.0, 2.5, 4.0]))
        m = match_waypoints(pred, truth, r_c)
        assert (m.tp, m.fp, m.fn) == greedy_reference(pred, truth, r_c)
        assert len({a for a, _, _ in m.matches}) == m.tp == len({b for _, b, _ in m.matches})
        assert all(d <= r_c for _, _, d in m.matches)


def test_truth_permutation_invariance():
    rng = np.random.default_rng(6)
    for _ in range(200):
        pred, truth = random_instance(rng)
        perm = list(rng.permutation(len(truth)))
        a = match_waypoints(pred, truth, 3.0)
        b = match_waypoints(pred, [truth[i] for i in perm], 3.0)
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)


def field_images(rng, n=5):
    images = []
    for _ in range(n):
        truth = [Point(float(x), float(y)) for x, y in rng.uniform(0, 256, (12, 2))]
        images.append(truth)
    return images


def test_thresholds():
    t = thresholds_for(0.1)
    assert len(t) == 11 and t[0] == 0.0 and t[-1] == 1.0 and t[3] == 0.3
    with pytest.raises(ValueError):
        thresholds_for(0.3)


def test_perfect_detector_ap_one():
    rng = np.random.default_rng(0)
    imgs = [([Waypoint(p.x, p.y, 0.95) for p in t], t) for t in field_images(rng)]
    r = average_precision(imgs, 8.0, d_c=0.0)
    assert r.ap == pytest.approx(1.0)
    # nothing exceeds the top threshold
    assert r.recall[-1] == 0.0 and r.precision[-1] == 0.0


def test_empty_detector_ap_zero():
    rng = np.random.default_rng(1)
    r = average_precision([([], t) for t in field_images(rng)], 8.0)
    assert r.ap == 0.0
    assert np.all(r.recall == 0) and np.all(r.precision == 0)


def test_zero_truths_raise():
    with pytest.raises(UndefinedRecallError):
        average_precision([([Waypoint(1, 1, 0.9)], [])], 4.0)
    with pytest.raises(UndefinedRecallError):
        average_precision([([], [Point(1, 1)]), ([], [])], 4.0, aggregate="macro")
    with pytest.raises(ValueError):
        average_precision([], 4.0)


def test_interpolated_area_hand_example():
    # recall 1 at precision 0.5, then recall 0.5 at precision 1
    assert interpolated_area([0.5, 1.0, 0.0], [1.0, 0.5, 0.0]) == pytest.approx(0.5 * 0.5 + 0.5 * 1.0)
    assert interpolated_area([1.0, 0.5], [1.0, 0.5]) == pytest.approx(0.5 * 1.0 + 0.5 * 1.0)
    assert interpolated_area([0.25], [1.0]) == pytest.approx(0.25)


def noisy_images(rng, n=4):
    imgs = []
    for truth in field_images(rng, n):
        pred = []
        for p in truth:
            if rng.random() < 0.8:
                pred.append(Waypoint(p.x + rng.normal(0, 2), p.y + rng.normal(0, 2), float(rng.uniform(0, 1))))
        for x, y in rng.uniform(0, 256, (5, 2)):
            pred.append(Waypoint(float(x), float(y), float(rng.uniform(0, 1))))
        imgs.append((pred, truth))
    return imgs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pr_ranges_and_monotone_recall(seed):
    rng = np.random.default_rng(seed)
    for agg in ("micro", "macro"):
        r = average_precision(noisy_images(rng), 4.0, aggregate=agg)
        assert np.all((r.precision >= 0) & (r.precision <= 1))
        assert np.all((r.recall >= 0) & (r.recall <= 1))
        assert np.all(np.diff(r.recall) <= 1e-12)
        assert 0.0 <= r.ap <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_correct_prediction_never_lowers_ap(seed):
    rng = np.random.default_rng(seed)
    imgs = noisy_images(rng, 3)
    base = average_precision(imgs, 4.0, d_c=0.0).ap
    i = int(rng.integers(len(imgs)))
    pred, truth = imgs[i]
    # a truth nobody is near at any threshold
    m = match_waypoints(pred, truth, 4.0)
    free = sorted(set(range(len(truth))) - {b for _, b, _ in m.matches})
    if not free:
        return
    t = truth[free[0]]
    imgs[i] = (pred + [Waypoint(t.x, t.y, 1.0)], truth)
    assert average_precision(imgs, 4.0, d_c=0.0).ap >= base - 1e-12


def test_larger_radius_not_worse():
    rng = np.random.default_rng(3)
    imgs = noisy_images(rng, 6)
    aps = [average_precision(imgs, rc).ap for rc in (1.0, 2.0, 4.0, 8.0)]
    assert aps == sorted(aps)


def test_curve_export():
    rng = np.random.default_rng(4)
    r = average_precision(noisy_images(rng, 2), 8.0)
    c = r.curve()
    assert len(c) == 11 and set(c[0]) == {"t_c", "precision", "recall"}
