"""Command-line entry point: ``isacsim <group> <verb> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import beampred as bp
from .bus import Bus, BusError, CorruptBagError, bag_record, bag_replay, format_inspect
from .ckm import CkmError, generate_ckm, load_ckm, write_outputs
from .config import ConfigError, load_config
from .messages import CodecError
from .scene import SceneError, export_assets, extrude_footprints, load_footprints, simplify_mesh
from .sensing import TrajectoryError
from .session import BS, POSE_TOPIC, SessionError, build_scene, run_session, trajectory_bag
from .timebase import SimClock

log = logging.getLogger("isacsim")

ERRORS = (ConfigError, SessionError, SceneError, CkmError, bp.BeamPredError, BusError, CorruptBagError,
          CodecError, TrajectoryError, OSError)


def _out_dir(cfg, given, sub):
    return Path(given) if given else Path(cfg["session.output_dir"]) / sub


def cmd_scene_build(args):
    cfg = load_config(args.config)
    asset, rtmesh = build_scene(cfg)
    a, r = export_assets(asset, rtmesh, _out_dir(cfg, args.out, "scene"))
    print(f"scene asset: {len(asset)} triangles -> {a}")
    print(f"rt mesh:     {len(rtmesh)} triangles -> {r}")


def cmd_scene_simplify(args):
    if args.config:
        cfg = load_config(args.config)
        fp_path, cell, scfg = cfg["scene.footprints"], cfg["scene.visual_cell"], cfg.simplify()
    else:
        from .scene import SimplifyConfig
        fp_path, cell, scfg = args.footprints, args.visual_cell, SimplifyConfig()
    if args.ratio is not None:
        scfg = replace(scfg, ratio=args.ratio)
    asset = extrude_footprints(load_footprints(fp_path), visual_cell=cell)
    rtmesh = simplify_mesh(asset, scfg)
    factor = len(asset) / max(len(rtmesh), 1)
    print(f"triangles before: {len(asset)}")
    print(f"triangles after:  {len(rtmesh)}")
    print(f"reduction:        {factor:.2f}x")
    if args.out:
        export_assets(asset, rtmesh, args.out)


def cmd_ckm_generate(args):
    cfg = load_config(args.config)
    _, rtmesh = build_scene(cfg)
    workers = args.workers if args.workers is not None else cfg["ckm.workers"]
    ckm = generate_ckm(rtmesh, cfg.bs_pose(), cfg.grid(), cfg.link_setup(), workers=workers)
    files = write_outputs(ckm, _out_dir(cfg, args.out, "ckm"))
    for f in files:
        print(f)
    print(f"digest {ckm.digest}")


def cmd_bag_inspect(args):
    print(format_inspect(args.bag))


def cmd_bag_replay(args):
    clock = SimClock()
    bus = Bus(clock)
    rec = bag_record(bus)
    n = bag_replay(args.bag, bus, clock)
    print(f"replayed {n} records")
    if args.out:
        print(f"recorded -> {rec.write(args.out)}")


def cmd_bag_from_trajectory(args):
    path = trajectory_bag(args.trajectory, args.out, int(round(args.tick_ms * 1e6)), args.rate_hz)
    print(f"trajectory bag -> {path}")


def cmd_run(args):
    cfg = load_config(args.config, seed=args.seed)
    if args.mode == "replay" and not args.bag:
        raise SessionError("replay mode needs --bag")
    res = run_session(cfg, args.mode, bag=args.bag, out=args.out)
    print(f"session bag -> {res.bag}")
    for topic, n in res.counts.items():
        print(f"  {topic:<20} {n}")


def cmd_beampred_eval(args):
    cfg = load_config(args.config)
    if args.ckm:
        samples = bp.dataset_from_ckm(load_ckm(args.ckm))
    elif args.bag:
        cam_pose = cfg.bs_pose()   # the base-station camera sits at the bs frame origin
        samples = bp.build_dataset(args.bag, int(round(cfg["beampred.slop_ms"] * 1e6)), cfg.bs_camera(),
                                   cam_pose, POSE_TOPIC)
    else:
        raise bp.BeamPredError("give --bag or --ckm")
    if args.export:
        bp.export_dataset(samples, args.export)
    train, test = bp.split_dataset(samples, cfg["beampred.train_fraction"], cfg["beampred.seed"])
    if not train or not test:
        raise bp.BeamPredError(f"dataset of {len(samples)} samples is too small to split")
    report = bp.evaluate_topk(bp.KnnPredictor(train, cfg["beampred.k"]), test)
    print(f"dataset: {len(samples)} samples ({len(train)} train / {len(test)} test), link {BS}")
    print(report.format())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isacsim", description="ISAC scene, channel and session tools")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="group", required=True)

    scene = sub.add_parser("scene", help="scene construction").add_subparsers(dest="verb", required=True)
    s = scene.add_parser("build", help="extrude, simplify and export both scene assets")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default <output_dir>/scene)")
    s.set_defaults(func=cmd_scene_build)
    s = scene.add_parser("simplify", help="report triangle counts before and after simplification")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?")
    src.add_argument("--footprints", help="footprint file (instead of a config)")
    s.add_argument("--visual-cell", type=float, default=0.0, help="tessellation cell with --footprints (m)")
    s.add_argument("--ratio", type=float, help="override the decimation ratio")
    s.add_argument("--out", help="also export both assets here")
    s.set_defaults(func=cmd_scene_simplify)

    ckm = sub.add_parser("ckm", help="channel knowledge maps").add_subparsers(dest="verb", required=True)
    s = ckm.add_parser("generate", help="grid-scan the configured area")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default <output_dir>/ckm)")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_ckm_generate)

    bag = sub.add_parser("bag", help="bag tooling").add_subparsers(dest="verb", required=True)
    s = bag.add_parser("inspect", help="list topics and record counts")
    s.add_argument("bag")
    s.set_defaults(func=cmd_bag_inspect)
    s = bag.add_parser("replay", help="re-publish a bag on a fresh bus, optionally re-recording it")
    s.add_argument("bag")
    s.add_argument("--out", help="record the replayed stream to this bag")
    s.set_defaults(func=cmd_bag_replay)
    s = bag.add_parser("from-trajectory", help="record a trajectory file's pose stream as a bag")
    s.add_argument("trajectory")
    s.add_argument("out")
    s.add_argument("--tick-ms", type=float, default=10.0)
    s.add_argument("--rate-hz", type=float, default=100.0)
    s.set_defaults(func=cmd_bag_from_trajectory)

    s = sub.add_parser("run", help="run a session and record its bag")
    s.add_argument("config")
    s.add_argument("--mode", choices=("online", "replay"), default="online")
    s.add_argument("--bag", help="trajectory bag for replay mode")
    s.add_argument("--out", help="session bag path (default <output_dir>/session.bag)")
    s.add_argument("--seed", type=int, help="override session.seed")
    s.set_defaults(func=cmd_run)

    bpp = sub.add_parser("beampred", help="beam prediction").add_subparsers(dest="verb", required=True)
    s = bpp.add_parser("eval", help="k-NN top-k accuracy on a session bag or a CKM")
    s.add_argument("config")
    s.add_argument("--bag", help="session bag with /gnss and /channel/kpi")
    s.add_argument("--ckm", help="CKM output directory")
    s.add_argument("--export", help="write the dataset as text records")
    s.set_defaults(func=cmd_beampred_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except ERRORS as exc:
        print(f"isacsim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
