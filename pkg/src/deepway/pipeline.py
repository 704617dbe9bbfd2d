"""End-to-end path generation: network, decoding, ordering and planning."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import DeepWayError, Waypoint, as_grid
from .decode import DecodeConfig, decode_and_suppress, suppress
from .metrics import average_precision, coverage_score
from .order import OrderParams, RouteOrder, order_waypoints
from .plan import PathPlan, plan_route

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    decode: DecodeConfig = DecodeConfig()
    order: OrderParams = OrderParams()
    w: float = 2.0
    inflation: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PipelineResult:
    waypoints: list
    order: RouteOrder
    plan: PathPlan
    info: dict = field(default_factory=dict)


def fit_network(net, shape):
    """The network rebuilt for a square input covering ``shape``.

    The layers are fully convolutional, so only the configured input size
    changes; the side is rounded up to a multiple of the total stride.
    """
    from .nn import DeepWayNet
    stride = 2 ** net.cfg.n_modules
    side = max(shape)
    side = max(stride, -(-side // stride) * stride)
    if side == net.cfg.input_size:
        return net
    return DeepWayNet(dataclasses.replace(net.cfg, input_size=side), net.params)


def predict_waypoints(net, grid, config: DecodeConfig = DecodeConfig()) -> list[Waypoint]:
    """Decoded and suppressed waypoints for one grid of any size.

    The grid is zero-padded at the bottom and right to the network input, so
    image coordinates are unchanged; waypoints outside the grid are dropped.
    """
    grid = as_grid(grid)
    fitted = fit_network(net, grid.shape)
    side = fitted.cfg.input_size
    x = np.zeros((side, side), dtype=np.float32)
    x[:grid.shape[0], :grid.shape[1]] = grid
    pred = fitted.predict(x)
    cfg = dataclasses.replace(config, k=fitted.cfg.k)
    h, w = grid.shape
    return [p for p in decode_and_suppress(pred, cfg)
            if -0.5 <= p.x < w - 0.5 and -0.5 <= p.y < h - 0.5]


def plan_from_waypoints(grid, waypoints, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    grid = as_grid(grid)
    wps = [w if isinstance(w, Waypoint) else Waypoint(float(w[0]), float(w[1]), 1.0) for w in waypoints]
    order = order_waypoints(wps, grid, config.order)
    plan = plan_route(grid, order, config.w, config.order.d_c, config.inflation)
    return PipelineResult(wps, order, plan)


def run_pipeline(grid, net=None, waypoints=None,
                 config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Route and path for ``grid`` from a network or from given waypoints."""
    if (net is None) == (waypoints is None):
        raise ValueError("give exactly one of a network or a waypoint list")
    if net is not None:
        waypoints = predict_waypoints(net, grid, config.decode)
        log.info("%d waypoints above t_c=%.2f", len(waypoints), config.decode.t_c)
    return plan_from_waypoints(grid, waypoints, config)


def _coverage(grid, waypoints, total_rows, config):
    try:
        res = plan_from_waypoints(grid, waypoints, config)
    except DeepWayError as exc:
        log.warning("pipeline failed: %s", exc)
        return {"score": 0.0, "covered_rows": 0, "total_rows": int(total_rows), "error": str(exc)}
    rep = coverage_score(grid, res.plan, res.order, total_rows)
    return {"score": rep.score, "covered_rows": rep.covered_rows, "total_rows": rep.total_rows}


def evaluate_dataset(dataset, net=None, predictions=None, r_c=(2.0, 4.0, 8.0),
                     config: PipelineConfig = PipelineConfig(), aggregate: str = "micro",
                     coverage: bool = True) -> dict:
    """AP at each ``r_c`` and per-image coverage over a dataset.

    Predictions come from ``net`` (all cells above confidence 0 for the AP
    sweep, the configured ``t_c`` for planning), from ``predictions`` (one
    waypoint list per image) or, with neither, from the ground truth.
    """
    n = len(dataset)
    truths = [dataset.truth(i) for i in range(n)]
    if net is not None:
        raw = [predict_waypoints(net, t.grid, dataclasses.replace(config.decode, t_c=0.0, d_c=0.0))
               for t in truths]
        planned = [suppress_above(r, config.decode) for r in raw]
        source = "model"
    elif predictions is not None:
        if len(predictions) != n:
            raise ValueError(f"{len(predictions)} prediction lists for {n} images")
        raw = planned = [list(p) for p in predictions]
        source = "predictions"
    else:
        raw = planned = [[Waypoint(p.x, p.y, 1.0) for p in t.waypoints] for t in truths]
        source = "oracle"
    images = [(raw[i], truths[i].waypoints) for i in range(n)]
    report = {"images": n, "source": source, "aggregate": aggregate, "ap": {}, "curves": {}}
    for rc in r_c:
        res = average_precision(images, float(rc), config.decode.d_c, aggregate=aggregate)
        report["ap"][f"{float(rc):g}"] = res.ap
        report["curves"][f"{float(rc):g}"] = res.curve()
    if coverage:
        per = [_coverage(truths[i].grid, planned[i], truths[i].n_rows, config) for i in range(n)]
        report["coverage"] = {"per_image": per, "mean": float(np.mean([c["score"] for c in per]))}
    return report


def suppress_above(waypoints, config: DecodeConfig) -> list[Waypoint]:
    """Waypoints above ``t_c`` after suppression at ``d_c``."""
    return suppress([w for w in waypoints if w.confidence > config.t_c], config.d_c)
