"""Command-line entry point: gen, train, predict, plan, eval and render."""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .core import DeepWayError, Waypoint
from .datagen import Dataset, FieldParams, FieldTruth, generate_dataset
from .decode import DecodeConfig
from .io import (FormatError, read_json, read_mask, read_waypoints, waypoints_to_json, write_json,
                 write_waypoints)
from .metrics import coverage_score, estimate_total_rows
from .order import OrderParams, RouteOrder
from .pipeline import PipelineConfig, evaluate_dataset, predict_waypoints, run_pipeline
from .plan import PartialPlanError, PathPlan
from .render import save_overlay

log = logging.getLogger("deepway")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_DIVERGED, EXIT_FORMAT = 0, 1, 2, 3, 4


# config handling ------------------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines (an optional ``[section]`` header is ignored)."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text if text.lstrip().startswith("[") else "[deepway]\n" + text)
    except configparser.Error as exc:
        raise FormatError(f"cannot parse config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        out.update(cp[section])
    return {k.replace("-", "_"): v for k, v in out.items()}


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            log.warning("config key %r is not an option of this command, ignored", key)
            continue
        act = actions[key]
        if act.nargs in ("+", "*"):
            defaults[key] = [act.type(v) if act.type else v for v in raw.split()]
        elif isinstance(act, argparse._StoreTrueAction):
            defaults[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = act.type(raw) if act.type else raw
    sub.set_defaults(**defaults)


def _resolved(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in d.items()}


def write_run_config(out_dir, args, **extra) -> None:
    data = {"version": __version__, "command": args.command, "args": _resolved(args)}
    data.update(extra)
    write_json(Path(out_dir) / "run_config.json", data)


def _field_params(args) -> FieldParams:
    over = {}
    if args.holes is not None:
        over["hole_probability"] = args.holes
    if args.size == 800 and not args.scaled:
        return FieldParams(**over)
    return FieldParams.scaled(args.size, **over)


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(decode=DecodeConfig(t_c=args.tc, d_c=args.dc, k=args.k),
                          order=OrderParams(d_c=args.dc), w=args.w, inflation=args.inflate)


def _load_net(path):
    from .nn import load_weights
    try:
        return load_weights(path)
    except OSError as exc:
        raise FormatError(f"cannot read weights {path}: {exc}") from exc


def _oracle_waypoints(path, grid):
    data = read_json(path)
    if isinstance(data, dict) and "waypoints_a" in data:
        truth = FieldTruth.from_json(data, grid)
        return [Waypoint(p.x, p.y, 1.0) for p in truth.waypoints], truth.n_rows
    return read_waypoints(path), None


# commands ------------------------------------------------------------------------

def cmd_gen(args) -> int:
    params = _field_params(args)
    manifest = generate_dataset(args.seed, args.count, params, args.out, workers=args.workers)
    write_run_config(args.out, args, field_params=params.to_dict())
    print(f"wrote {manifest['count']} fields to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .nn import ModelConfig, TrainConfig, TrainingDivergedError, save_weights, train
    ds = Dataset(args.data)
    size = ds.params.image_size
    mcfg = ModelConfig(input_size=size, k=args.k, n_modules=args.modules, filters=args.filters)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                       lambda_wp=args.lambda_wp, lambda_nowp=args.lambda_nowp, seed=args.seed,
                       precision=args.precision)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_run_config(out.parent, args, model=mcfg.to_dict(), train=tcfg.to_dict())
    try:
        res = train(ds, mcfg, tcfg, checkpoint_dir=out.parent / "checkpoints")
    except TrainingDivergedError as exc:
        log.error("%s; last checkpoint: %s", exc, exc.checkpoint)
        if exc.last_good is not None:
            save_weights(exc.last_good, out.with_suffix(".last_good.dway"))
        return EXIT_DIVERGED
    save_weights(res.net, out)
    write_json(out.with_suffix(".loss.json"), {"epoch_loss": res.history, "seconds": res.seconds})
    print(f"trained {len(res.history)} epochs, weights in {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    net = _load_net(args.weights)
    cfg = DecodeConfig(t_c=args.tc, d_c=args.dc, k=net.cfg.k)
    if args.data:
        ds = Dataset(args.data)
        items = [waypoints_to_json(predict_waypoints(net, ds.mask(i), cfg)) for i in range(len(ds))]
        write_json(args.out, {"t_c": args.tc, "d_c": args.dc, "items": items})
    else:
        write_waypoints(args.out, predict_waypoints(net, read_mask(args.mask), cfg))
    write_run_config(Path(args.out).parent, args)
    return EXIT_OK


def cmd_plan(args) -> int:
    grid = read_mask(args.mask)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _pipeline_config(args)
    total = args.total_rows
    if args.oracle:
        wps, n_rows = _oracle_waypoints(args.oracle, grid)
        total = total or n_rows
        net = None
    elif args.weights:
        net, wps = _load_net(args.weights), None
        cfg = dataclasses.replace(cfg, decode=dataclasses.replace(cfg.decode, k=net.cfg.k))
    else:
        wps, net = read_waypoints(args.waypoints), None
    write_run_config(out, args, pipeline=cfg.to_dict())
    try:
        res = run_pipeline(grid, net=net, waypoints=wps, config=cfg)
    except PartialPlanError as exc:
        write_json(out / "path_partial.json", exc.plan.to_json())
        raise
    write_waypoints(out / "waypoints.json", res.waypoints)
    write_json(out / "route.json", res.order.to_json())
    write_json(out / "path.json", res.plan.to_json())
    save_overlay(out / "overlay.png", grid, order=res.order, plan=res.plan, radius=args.radius)
    total = total or estimate_total_rows(grid, res.order.angle)
    if total:
        rep = coverage_score(grid, res.plan, res.order, total)
        write_json(out / "coverage.json", rep.to_json())
        print(f"{len(res.order.sequence)} waypoints, path {len(res.plan.pixels)} px, "
              f"coverage {rep.score:.3f} ({rep.covered_rows}/{rep.total_rows} rows)")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _pipeline_config(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mask:
        # external mask without ground truth: coverage only
        grid = read_mask(args.mask)
        if args.weights:
            net = _load_net(args.weights)
            res = run_pipeline(grid, net=net, config=dataclasses.replace(
                cfg, decode=dataclasses.replace(cfg.decode, k=net.cfg.k)))
        else:
            res = run_pipeline(grid, waypoints=read_waypoints(args.predictions), config=cfg)
        total = args.total_rows or estimate_total_rows(grid, res.order.angle)
        rep = coverage_score(grid, res.plan, res.order, total)
        report = {"images": 1, "source": "mask", "coverage": {"per_image": [rep.to_json()],
                                                               "mean": rep.score}}
    else:
        ds = Dataset(args.data)
        net = preds = None
        if args.weights:
            net = _load_net(args.weights)
            cfg = dataclasses.replace(cfg, decode=dataclasses.replace(cfg.decode, k=net.cfg.k))
        elif args.predictions:
            data = read_json(args.predictions)
            try:
                preds = [[Waypoint(float(d["x"]), float(d["y"]), float(d["confidence"])) for d in item]
                         for item in data["items"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"malformed predictions file: {exc}") from exc
        elif not args.oracle:
            raise FormatError("eval needs --weights, --predictions or --oracle")
        report = evaluate_dataset(ds, net=net, predictions=preds, r_c=args.rc, config=cfg,
                                  aggregate=args.aggregate, coverage=not args.no_coverage)
        for rc, ap in report["ap"].items():
            print(f"AP(r_c={rc}) = {ap:.4f}")
        if args.csv:
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["r_c", "t_c", "precision", "recall"])
                for rc, curve in report["curves"].items():
                    for pt in curve:
                        w.writerow([rc, pt["t_c"], pt["precision"], pt["recall"]])
    if "coverage" in report:
        print(f"mean coverage = {report['coverage']['mean']:.4f}")
    report["config"] = cfg.to_dict()
    write_json(out, report)
    write_run_config(out.parent, args, pipeline=cfg.to_dict())
    return EXIT_OK


def cmd_render(args) -> int:
    grid = read_mask(args.mask)
    order = RouteOrder.from_json(read_json(args.route)) if args.route else None
    plan = PathPlan.from_json(read_json(args.path)) if args.path else None
    wps = read_waypoints(args.waypoints) if args.waypoints else None
    save_overlay(args.out, grid, waypoints=wps, order=order, plan=plan, radius=args.radius)
    return EXIT_OK


# parser ----------------------------------------------------------------------------

def _pipeline_flags(p):
    p.add_argument("--tc", type=float, default=0.9, help="confidence threshold (default 0.9)")
    p.add_argument("--dc", type=float, default=8.0, help="suppression distance in px (default 8)")
    p.add_argument("--k", type=int, default=8, help="output cell size in px (default 8)")
    p.add_argument("--w", type=float, default=2.0, help="A* heuristic weight (default 2)")
    p.add_argument("--inflate", type=float, default=0.0, help="obstacle inflation radius in px")
    p.add_argument("--total-rows", type=int, default=None,
                   help="row count for coverage (default: truth, else estimated)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deepway", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file supplying option defaults")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=800)
    p.add_argument("--scaled", action="store_true",
                   help="scale row counts to the image size (implied for sizes other than 800)")
    p.add_argument("--holes", type=float, default=None, help="hole probability")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = add("train", cmd_train, "train the waypoint network")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="weights file")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--lambda-wp", type=float, default=0.7)
    p.add_argument("--lambda-nowp", type=float, default=0.3)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--modules", type=int, default=4)
    p.add_argument("--filters", type=int, default=16)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--seed", type=int, default=0)

    p = add("predict", cmd_predict, "decode waypoints with a trained network")
    p.add_argument("--weights", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mask", type=Path)
    src.add_argument("--data", type=Path)
    p.add_argument("--tc", type=float, default=0.9)
    p.add_argument("--dc", type=float, default=8.0)
    p.add_argument("--out", type=Path, required=True)

    p = add("plan", cmd_plan, "order waypoints and plan the coverage path for a mask")
    p.add_argument("--mask", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights", type=Path)
    src.add_argument("--oracle", type=Path, help="ground-truth JSON or waypoint list")
    src.add_argument("--waypoints", type=Path)
    _pipeline_flags(p)
    p.add_argument("--radius", type=float, default=3.0, help="waypoint disc radius in the overlay")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("eval", cmd_eval, "AP and coverage on a dataset, or coverage on a mask")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path)
    src.add_argument("--mask", type=Path)
    how = p.add_mutually_exclusive_group()
    how.add_argument("--weights", type=Path)
    how.add_argument("--predictions", type=Path)
    how.add_argument("--oracle", action="store_true", help="use the ground truth as predictions")
    p.add_argument("--rc", type=float, nargs="+", default=[2.0, 4.0, 8.0])
    p.add_argument("--aggregate", choices=("micro", "macro"), default="micro")
    p.add_argument("--no-coverage", action="store_true")
    p.add_argument("--csv", type=Path, help="also write the PR curves as CSV")
    _pipeline_flags(p)
    p.add_argument("--out", type=Path, required=True, help="report JSON")

    p = add("render", cmd_render, "draw an overlay from saved artifacts")
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--route", type=Path)
    p.add_argument("--path", type=Path)
    p.add_argument("--waypoints", type=Path)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--out", type=Path, required=True)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cmd = next((a for a in argv if not a.startswith("-")), None)
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        if cmd in subs.choices:
            _apply_config(parser, subs.choices[cmd], argv)
        args = parser.parse_args(argv)
    except FormatError as exc:
        log.error("%s", exc)
        return EXIT_FORMAT
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.getLogger().setLevel(logging.INFO if args.verbose == 1 else logging.DEBUG)
    if args.command == "eval" and args.mask and args.oracle:
        log.error("--oracle needs a dataset; use --predictions with --mask")
        return EXIT_USAGE
    if args.command == "eval" and args.mask and not (args.weights or args.predictions):
        log.error("eval on a mask needs --weights or --predictions")
        return EXIT_USAGE
    try:
        return args.func(args)
    except FormatError as exc:
        log.error("%s", exc)
        return EXIT_FORMAT
    except (DeepWayError, ValueError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
