"""Mask PNG and JSON readers/writers shared by the pipeline stages."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DeepWayError, Waypoint

log = logging.getLogger(__name__)


class FormatError(DeepWayError, ValueError):
    """A file does not follow the expected format."""


def write_mask(path, grid: np.ndarray) -> None:
    """Write a binary grid as 8-bit grayscale PNG (0 background, 255 occupied)."""
    img = Image.fromarray((np.asarray(grid) > 0).astype(np.uint8) * 255, mode="L")
    img.save(path, format="PNG", optimize=False)


def read_mask(path) -> np.ndarray:
    """Read a mask PNG as a 0/1 uint8 grid. Any nonzero pixel counts as occupied."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read mask {path}: {exc}") from exc
    odd = (arr != 0) & (arr != 255)
    if odd.any():
        log.warning("%s: %d pixels are neither 0 nor 255, treating nonzero as occupied",
                    path, int(odd.sum()))
    return (arr != 0).astype(np.uint8)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n", encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read JSON {path}: {exc}") from exc


def waypoints_to_json(waypoints) -> list[dict]:
    return [{"x": float(w.x), "y": float(w.y), "confidence": float(w.confidence)}
            for w in waypoints]


def waypoints_from_json(data) -> list[Waypoint]:
    try:
        return [Waypoint(float(d["x"]), float(d["y"]), float(d.get("confidence", 1.0)))
                for d in data]
    except (TypeError, KeyError, ValueError) as exc:
        raise FormatError(f"malformed waypoint list: {exc}") from exc


def write_waypoints(path, waypoints) -> None:
    write_json(path, waypoints_to_json(waypoints))


def read_waypoints(path) -> list[Waypoint]:
    return waypoints_from_json(read_json(path))
