"""Overlay images: occupancy mask, waypoints as discs and the path as a stroke."""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .order import SYNTHETIC_CONFIDENCE

BACKGROUND = (255, 255, 255)
ROWS = (0, 0, 0)
PATH = (220, 30, 30)
GROUP_COLOURS = {"A": (30, 90, 220), "B": (20, 160, 60), None: (120, 120, 120)}
SYNTHETIC = (245, 150, 0)


def overlay(grid, waypoints=None, order=None, plan=None, radius: float = 3.0,
            stroke: int = 1) -> Image.Image:
    """RGB overlay. Waypoints of ``order`` are coloured by group (synthetic
    ones in orange); plain ``waypoints`` are drawn in grey."""
    occ = np.asarray(grid) != 0
    rgb = np.empty(occ.shape + (3,), dtype=np.uint8)
    rgb[:] = BACKGROUND
    rgb[occ] = ROWS
    img = Image.fromarray(rgb, mode="RGB")
    draw = ImageDraw.Draw(img)
    if plan is not None and len(plan.pixels):
        pts = [tuple(map(float, p)) for p in plan.pixels]
        if len(pts) > 1:
            draw.line(pts, fill=PATH, width=stroke)
        else:
            draw.point(pts, fill=PATH)
    discs = []
    if waypoints is not None:
        discs += [(w, None) for w in waypoints]
    if order is not None:
        discs += list(zip(order.sequence, order.groups))
    for w, g in discs:
        x, y = float(w[0]), float(w[1])
        conf = w[2] if len(w) > 2 else 1.0
        colour = SYNTHETIC if g is not None and conf == SYNTHETIC_CONFIDENCE else GROUP_COLOURS[g]
        draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=colour)
    return img


def save_overlay(path, grid, **kw) -> None:
    overlay(grid, **kw).save(path, format="PNG")
