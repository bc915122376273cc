"""Command-line entry point: ``eomap <subcommand> ...``.

Grids travel between subcommands as EOMG files named ``<scene-id>.<kind>.eomg``
(``E``, ``M``, ``D`` for ground truth, ``P`` for predictions, one file per raster
channel). Every output directory carries a ``meta.json`` with the region and
horizon so that consumers can reject geometry mismatches.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io as eio
from .baselines import MODELS, inject_poisson_unseen, predict_physical
from .geometry import CriticalRegion
from .metrics import MetricsConfig, build_report, format_table
from .net import NetConfig
from .occupancy import earliest_occupancy, unseen_mask
from .planner import candidates_from_json, filter_safe
from .raster import CHANNELS, RasterImage, drivable_mask, rasterize_history
from .scene import (GeneratorConfig, Horizon, dumps_scene, horizon_from_dict, scene_from_dict,
                    synth_generate, unseen_agent_ids)

RUN_DIR_ENV = "EOMAP_RUN_DIR"
log = logging.getLogger("eomap")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# shared flag groups -----------------------------------------------------------

def _geometry_flags(p):
    g = p.add_argument_group("geometry")
    g.add_argument("--desk", action="store_true",
                   help="100x100 grid at 0.5 m/px instead of the 500x500 full-scale grid")
    g.add_argument("--resolution-m-per-px", type=float, default=None)
    g.add_argument("--bounds-px", type=int, nargs=4, metavar=("L", "P", "M", "K"),
                   help="inclusive ego-centric pixel bounds l p m k")
    g.add_argument("--history-steps", type=int, default=20, help="H, at the scene rate")
    g.add_argument("--horizon-steps", type=int, default=30, help="T, at the scene rate")


def _region(args) -> CriticalRegion:
    base = CriticalRegion.desk() if args.desk else CriticalRegion.full_scale()
    if args.bounds_px is not None:
        base = replace(base, l=args.bounds_px[0], p=args.bounds_px[1], m=args.bounds_px[2],
                       k=args.bounds_px[3])
    if args.resolution_m_per_px is not None:
        base = replace(base, resolution=args.resolution_m_per_px)
    return base


def _horizon(args) -> Horizon:
    return Horizon(args.history_steps, args.horizon_steps)


def _meta(region, horizon, **extra):
    return {"region": region.to_dict(), "horizon": {"H": horizon.H, "T": horizon.T,
                                                    "t": horizon.t}, **extra}


def _write_meta(out, region, horizon, **extra):
    eio.atomic_write_text(os.path.join(out, "meta.json"),
                          json.dumps(_meta(region, horizon, **extra), indent=1, sort_keys=True))


def _read_meta(d):
    path = os.path.join(d, "meta.json")
    if not os.path.exists(path):
        raise DataError(f"{d}: missing meta.json")
    with open(path) as f:
        return json.load(f)


def _load_scenes(d):
    if not os.path.isdir(d):
        raise DataError(f"{d}: not a directory")
    names = sorted(n for n in os.listdir(d) if n.endswith(".json") and n != "meta.json")
    if not names:
        raise DataError(f"{d}: no scene files")
    scenes = []
    for n in names:
        with open(os.path.join(d, n)) as f:
            try:
                raw = json.load(f)
                scenes.append((scene_from_dict(raw), horizon_from_dict(raw)))
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{n}: malformed scene ({e})") from e
    return scenes


def _grids(d, kind):
    """{scene_id: path} for ``<id>.<kind>.eomg`` files in ``d``."""
    if not os.path.isdir(d):
        raise DataError(f"{d}: not a directory")
    suffix = f".{kind}.eomg"
    return {n[:-len(suffix)]: os.path.join(d, n) for n in sorted(os.listdir(d))
            if n.endswith(suffix)}


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    elif text:
        print(text)


# subcommands ------------------------------------------------------------------

def cmd_gen_scenes(args):
    if args.n <= 0:
        raise UsageError("--n must be positive")
    region, horizon = _region(args), _horizon(args)
    cfg = GeneratorConfig(n_scenes=args.n, unseen_prob=args.unseen_prob, region=region,
                          horizon=horizon)
    scenes = synth_generate(cfg, args.seed)
    for s in scenes:
        eio.atomic_write_text(os.path.join(args.out, f"{s.id}.json"), dumps_scene(s, horizon))
    _write_meta(args.out, region, horizon, seed=args.seed)
    _emit(args, {"scenes": [s.id for s in scenes]}, f"wrote {len(scenes)} scenes to {args.out}")


def cmd_rasterize(args):
    region, horizon = _region(args), _horizon(args)
    ids = []
    for scene, h in _load_scenes(args.scenes):
        img = rasterize_history(scene, region, h or horizon, args.history_hz)
        for name, layer in zip(CHANNELS, img.data):
            eio.write_grid(layer, os.path.join(args.out, f"{scene.id}.{name}.eomg"))
        if args.ppm:
            eio.write_ppm(os.path.join(args.out, f"{scene.id}.ppm"), img.to_rgb())
        ids.append(scene.id)
    _write_meta(args.out, region, horizon, history_hz=args.history_hz)
    _emit(args, {"scenes": ids}, f"rasterized {len(ids)} scenes")


def cmd_gt(args):
    region, horizon = _region(args), _horizon(args)
    rows = []
    for scene, h in _load_scenes(args.scenes):
        h = h or horizon
        E = earliest_occupancy(scene, region, h).data
        ids = unseen_agent_ids(scene, region, h)
        M = unseen_mask(scene, region, h, ids).data
        D = drivable_mask(scene, region, scene.ego_pose(h.t))
        eio.write_grid(E.astype(np.float32), os.path.join(args.out, f"{scene.id}.E.eomg"))
        eio.write_grid(M.astype(np.uint8), os.path.join(args.out, f"{scene.id}.M.eomg"))
        eio.write_grid(D.astype(np.uint8), os.path.join(args.out, f"{scene.id}.D.eomg"))
        rows.append({"scene": scene.id, "unseen": sorted(ids)})
    _write_meta(args.out, region, horizon)
    _emit(args, {"scenes": rows}, f"wrote ground truth for {len(rows)} scenes")


def cmd_baseline(args):
    if args.inject_lambda < 0:
        raise UsageError("--inject-lambda must be >= 0")
    region, horizon = _region(args), _horizon(args)
    ids = []
    for i, (scene, h) in enumerate(_load_scenes(args.scenes)):
        h = h or horizon
        P = predict_physical(scene, region, h, args.model).data
        if args.inject_lambda > 0:
            P = inject_poisson_unseen(P, region, args.inject_lambda, [args.seed, i], h.T).data
        eio.write_grid(P.astype(np.float32), os.path.join(args.out, f"{scene.id}.P.eomg"))
        ids.append(scene.id)
    _write_meta(args.out, region, horizon, model=args.model, inject_lambda=args.inject_lambda)
    _emit(args, {"scenes": ids}, f"{args.model}: predicted {len(ids)} scenes")


def cmd_train(args):
    from .trainer import DatasetSpec, RunConfig, train
    if args.epochs <= 0 or args.batch_size <= 0 or args.lr <= 0:
        raise UsageError("--epochs, --batch-size and --lr must be positive")
    run_dir = args.run_dir or os.environ.get(RUN_DIR_ENV)
    if not run_dir:
        raise UsageError(f"--run-dir is required (or set {RUN_DIR_ENV})")
    region, horizon = _region(args), _horizon(args)
    cfg = RunConfig(
        dataset=DatasetSpec(n_train=args.n_train, n_val=args.n_val, seed=args.seed,
                            region=region, horizon=horizon),
        net=NetConfig(base_channels=args.base_channels, depth=args.depth,
                      head_bias=args.head_bias),
        lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        no_hard=args.no_hard, no_soft=args.no_soft, no_unseen=args.no_unseen,
        no_attention=args.no_attention, map_prior=not args.no_map_prior)
    res = train(cfg, run_dir=run_dir)
    last = res.log[-1]
    _emit(args, {"checkpoint": res.checkpoint, "final": last},
          f"checkpoint {res.checkpoint}; final loss {last['total']:.6g}")


def _check_geometry(meta_a, meta_b, what):
    for key in ("region", "horizon"):
        if meta_a.get(key) != meta_b.get(key):
            raise DataError(f"{what}: {key} mismatch ({meta_a.get(key)} vs {meta_b.get(key)})")


def _checkpoint_predictions(args, gt_meta):
    from .trainer import RunConfig, load_net, predict_all, prepare_sample
    region = CriticalRegion(**gt_meta["region"])
    horizon = Horizon(**gt_meta["horizon"])
    if not args.scenes or not args.run_dir:
        raise UsageError("--checkpoint needs --scenes and --run-dir")
    with open(os.path.join(args.run_dir, "config.json")) as f:
        config = RunConfig.from_dict(json.load(f))
    net = load_net(config, args.checkpoint)
    data = [prepare_sample(s, region, h or horizon) for s, h in _load_scenes(args.scenes)]
    try:
        preds = predict_all(net, data, region, horizon, map_prior=config.map_prior)
    except ValueError as e:
        raise DataError(str(e)) from e
    return {s.scene_id: P for s, P in zip(data, preds)}


def cmd_eval(args):
    from .trainer import snap
    gt_meta = _read_meta(args.gt_dir)
    T = gt_meta["horizon"]["T"]
    E_files = _grids(args.gt_dir, "E")
    if not E_files:
        raise DataError(f"{args.gt_dir}: no ground-truth grids")
    if args.checkpoint:
        P_map = _checkpoint_predictions(args, gt_meta)
        name = args.name or "model"
    elif args.pred_dir:
        _check_geometry(_read_meta(args.pred_dir), gt_meta, "prediction vs ground truth")
        P_map = _grids(args.pred_dir, "P")
        name = args.name or _read_meta(args.pred_dir).get("model", "pred")
    else:
        raise UsageError("give --pred-dir or --checkpoint")
    gt_ids, pred_ids = sorted(E_files), sorted(P_map)
    for a, b in zip(gt_ids + [None], pred_ids + [None]):
        if a != b:
            raise DataError(f"scene id mismatch: ground truth has {a!r}, predictions have {b!r}")
    E = [eio.read_grid(E_files[i]).astype(np.float64) for i in gt_ids]
    M = [eio.read_grid(os.path.join(args.gt_dir, f"{i}.M.eomg")) for i in gt_ids]
    D = [eio.read_grid(os.path.join(args.gt_dir, f"{i}.D.eomg")).astype(bool) for i in gt_ids]
    P = []
    for i, e in zip(gt_ids, E):
        p = P_map[i] if args.checkpoint else eio.read_grid(P_map[i])
        if np.shape(p) != e.shape:
            raise DataError(f"scene {i}: prediction grid {np.shape(p)} != {e.shape}")
        P.append(snap(p))
    cfg = MetricsConfig(C=args.C, T=T)
    reports = [build_report(name, P, E, M, T, cfg, gt_ids, D),
               build_report("oracle", E, E, M, T, cfg, gt_ids, D)]
    if args.out:
        eio.atomic_write_text(os.path.join(args.out, "report.csv"), reports[0].to_csv())
        eio.atomic_write_text(os.path.join(args.out, "report.json"), reports[0].to_json())
    _emit(args, [r.summary() for r in reports], format_table(reports))


def cmd_filter(args):
    if args.margin < 0:
        raise UsageError("--margin must be >= 0")
    P = eio.read_grid(args.eom)
    T = args.horizon_steps
    if T is None and os.path.exists(os.path.join(os.path.dirname(args.eom) or ".", "meta.json")):
        T = _read_meta(os.path.dirname(args.eom) or ".")["horizon"]["T"]
    with open(args.trajs) as f:
        try:
            cands = candidates_from_json(json.load(f))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{args.trajs}: malformed candidates ({e})") from e
    safe, unsafe = filter_safe(cands, P, args.margin, T)
    payload = {"safe": [c.name for c in safe],
               "unsafe": [{"name": c.name, "step": k.step, "cell": list(k.cell)}
                          for c, k in unsafe]}
    lines = [f"safe   {c.name}" for c in safe]
    lines += [f"unsafe {c.name} step={k.step} cell={k.cell}" for c, k in unsafe]
    _emit(args, payload, "\n".join(lines))


def cmd_viz(args):
    if args.grid:
        g = eio.read_grid(args.grid)
        if args.kind == "mask":
            img = eio.mask_to_gray(g)
        else:
            img = eio.eom_to_gray(g, args.horizon_steps)
        eio.write_pgm(args.out, img)
    elif args.scene:
        region, horizon = _region(args), _horizon(args)
        with open(args.scene) as f:
            raw = json.load(f)
        img = rasterize_history(scene_from_dict(raw), region, horizon_from_dict(raw) or horizon)
        eio.write_ppm(args.out, RasterImage(img.data, region).to_rgb())
    else:
        raise UsageError("give --grid or --scene")
    _emit(args, {"out": args.out}, f"wrote {args.out}")


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eomap", description="Earliest occupancy map pipeline")
    p.add_argument("--json", action="store_true", help="machine-readable stdout")
    p.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable stdout")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-scenes", parents=[common], help="generate synthetic scenes as JSON")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--unseen-prob", type=float, default=0.47)
    s.add_argument("--out", required=True)
    _geometry_flags(s)
    s.set_defaults(func=cmd_gen_scenes)

    s = sub.add_parser("rasterize", parents=[common], help="raster channels per scene")
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--history-hz", type=int, default=2)
    s.add_argument("--ppm", action="store_true", help="also write an RGB preview")
    _geometry_flags(s)
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("gt", parents=[common], help="earliest occupancy map, unseen mask, drivable mask")
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    _geometry_flags(s)
    s.set_defaults(func=cmd_gt)

    s = sub.add_parser("baseline", parents=[common], help="physical kinematic predictor")
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model", choices=MODELS, required=True)
    s.add_argument("--inject-lambda", type=float, default=0.0,
                   help="Poisson rate of injected unseen vehicles per scene")
    s.add_argument("--seed", type=int, default=0)
    _geometry_flags(s)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("train", parents=[common], help="train the network on generated scenes")
    s.add_argument("--run-dir")
    s.add_argument("--n-train", type=int, default=2000)
    s.add_argument("--n-val", type=int, default=400)
    s.add_argument("--epochs", type=int, default=30)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--base-channels", type=int, default=8)
    s.add_argument("--depth", type=int, default=2)
    s.add_argument("--head-bias", type=float, default=0.0)
    for flag in ("--no-hard", "--no-soft", "--no-unseen", "--no-attention"):
        s.add_argument(flag, action="store_true")
    s.add_argument("--no-map-prior", action="store_true",
                   help="do not zero predictions outside the drivable channel")
    _geometry_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="metrics table for predictions against ground truth")
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--pred-dir")
    s.add_argument("--checkpoint")
    s.add_argument("--run-dir", default=os.environ.get(RUN_DIR_ENV),
                   help="run directory holding config.json (with --checkpoint)")
    s.add_argument("--scenes", help="scene directory (with --checkpoint)")
    s.add_argument("--name")
    s.add_argument("--C", type=float, default=31.0)
    s.add_argument("--out", help="directory for report.csv / report.json")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("filter", parents=[common], help="split candidate trajectories into safe / unsafe")
    s.add_argument("--eom", required=True)
    s.add_argument("--trajs", required=True)
    s.add_argument("--margin", type=int, default=0, help="timesteps")
    s.add_argument("--horizon-steps", type=int, default=None,
                   help="sentinel T of the map (default: from meta.json beside it, else 30)")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("viz", parents=[common], help="PGM of a grid or PPM of a scene raster")
    s.add_argument("--grid")
    s.add_argument("--kind", choices=("eom", "mask"), default="eom")
    s.add_argument("--scene")
    s.add_argument("--out", required=True)
    _geometry_flags(s)
    s.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            stream=sys.stderr, format="%(levelname)s %(message)s")
        args.func(args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (DataError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
