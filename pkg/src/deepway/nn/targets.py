"""Training targets on the U x U cell grid and the reference loss."""
from __future__ import annotations

import logging

import numpy as np

from ..core import BoundsError
from ..decode import position_to_cell

log = logging.getLogger(__name__)


def encode_waypoints(points, grid_size: int, k: int, dtype=np.float64) -> tuple[np.ndarray, int]:
    """Target array ``(U, U, 3)`` for waypoints and the number of cell collisions.

    The cell containing a waypoint gets confidence 1 and the offsets that
    decode back to it exactly; the first waypoint of a cell wins.
    """
    U = int(grid_size)
    y = np.zeros((U, U, 3), dtype=dtype)
    collisions = 0
    for p in points:
        (ci, cj), (dx, dy) = position_to_cell((float(p[0]), float(p[1])), k)
        if not (0 <= ci < U and 0 <= cj < U):
            raise BoundsError(f"waypoint ({p[0]}, {p[1]}) outside the {U}x{U} cell grid")
        if y[cj, ci, 0]:
            collisions += 1
            continue
        y[cj, ci] = (1.0, dx, dy)
    if collisions:
        log.info("%d waypoint(s) shared a cell with an earlier one and were dropped", collisions)
    return y, collisions


def encode_targets(truth, config, dtype=np.float64) -> np.ndarray:
    """Targets for a :class:`FieldTruth` under a :class:`ModelConfig`."""
    if truth.grid.shape != (config.input_size, config.input_size):
        raise BoundsError(f"grid {truth.grid.shape} does not match input size {config.input_size}")
    return encode_waypoints(truth.waypoints, config.output_size, config.k, dtype)[0]


def loss_value(y: np.ndarray, y_hat: np.ndarray, lambda_wp: float = 0.7,
               lambda_nowp: float = 0.3) -> float:
    """Weighted sum-squared error over cells (single image or summed over a batch)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.shape[-1] != 3:
        raise ValueError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    wp = y[..., 0]
    d = (y - y_hat) ** 2
    return float(np.sum(wp * lambda_wp * d.sum(axis=-1)) + np.sum((1 - wp) * lambda_nowp * d[..., 0]))
