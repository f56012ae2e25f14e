"""Command-line entry point.

    eventmvs reconstruct --config run.cfg [--key=value ...]
    eventmvs compare --scene=3planes [--with-reference]
    eventmvs synth --scene=3planes --out data/
    eventmvs perf [--from-table3] [--format=csv|text]

Every configuration key can be overridden with ``--key=value``; ``--dump-config``
prints the effective configuration and exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, perf_model, synth
from .config import RunConfig, is_config_key, load_config
from .event_io import (
    ParseError,
    ValidationError,
    parse_calibration,
    parse_events,
    parse_trajectory,
    write_calibration,
    write_depth_map,
    write_events,
    write_point_cloud,
    write_trajectory,
)
from .geometry import DegenerateGeometryError, OutOfRangeError
from .sweep import run_pipeline

log = logging.getLogger("eventmvs")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

COMPARE_VARIANTS = (
    ("float_bilinear", {"datapath": "float", "vote_mode": "bilinear"}),
    ("float_nearest", {"datapath": "float", "vote_mode": "nearest"}),
    ("quantized_nearest", {"datapath": "quantized", "vote_mode": "nearest"}),
)
REFERENCE_VARIANT = ("reference_bilinear", {"datapath": "float", "vote_mode": "bilinear", "pipeline": "reference"})


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--dump-config", action="store_true", help="print the effective configuration and exit")
    common.add_argument("--workers", type=int, help="vote-execution threads (results are identical for any count)")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="eventmvs", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="{reconstruct,compare,synth,perf}")
    sub.required = True

    sub.add_parser("reconstruct", parents=[common], help="run a reconstruction and write depth maps, PLY and stats")

    c = sub.add_parser("compare", parents=[common], help="AbsRel of float/quantized, nearest/bilinear variants")
    c.add_argument("--with-reference", action="store_true",
                   help="also run the per-plane-homography reference pipeline")
    c.add_argument("--no-plot", action="store_true", help="skip the PNG figure")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--density", type=float, help="edge points per m^2 (built-in scenes only)")
    s.add_argument("--noise-rate", type=float, help="uniform spurious events per second")
    s.add_argument("--seed", type=int)

    f = sub.add_parser("perf", parents=[common], help="analytic latency/throughput model")
    f.add_argument("--from-table3", action="store_true", help="use the published stage times")
    f.add_argument("--format", choices=("text", "csv"), default="text")
    f.add_argument("--c-p0", type=float, default=perf_model.C_P0_DEFAULT)
    f.add_argument("--c-vote", type=float, default=perf_model.C_VOTE_DEFAULT)
    f.add_argument("--clock-hz", type=float, default=130e6)
    f.add_argument("--n-pe-zi", type=int, default=2)
    f.add_argument("--nz", type=int, help="depth planes (default: n_depth_planes of the configuration)")
    f.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    return p


def _split_overrides(extra: list[str]) -> dict[str, str]:
    """``--key=value`` pairs for configuration keys; anything else is a usage error."""
    out: dict[str, str] = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            raise UsageError(f"unrecognized argument {arg!r} (overrides take the form --key=value)")
        key, value = arg[2:].split("=", 1)
        key = key.replace("-", "_")
        if not is_config_key(key):
            raise UsageError(f"unknown option --{key}")
        out[key] = value
    return out


def _effective_config(args, overrides: dict[str, str]) -> RunConfig:
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    if args.out is not None:
        overrides["out"] = args.out
    if args.config and not Path(args.config).is_file():
        raise FileNotFoundError(f"configuration file not found: {args.config}")
    cfg = load_config(args.config, overrides)
    if args.config:
        # input paths in a config file are relative to that file
        base = Path(args.config).parent
        changes = {}
        for key in ("events", "trajectory", "calibration", "scene"):
            val = getattr(cfg, key)
            if val and key not in overrides and not Path(val).is_absolute() and (base / val).exists():
                changes[key] = str(base / val)
        cfg = cfg.replace(**changes)
    return cfg


# ---------------------------------------------------------------------------
# dataset loading


def _load_scene(name_or_path: str) -> synth.SceneSpec:
    if name_or_path in synth.BUILTIN_SCENES:
        return synth.BUILTIN_SCENES[name_or_path]()
    path = Path(name_or_path)
    if not path.is_file():
        raise FileNotFoundError(f"scene not found: {name_or_path} (built-ins: {', '.join(synth.BUILTIN_SCENES)})")
    return synth.SceneSpec.load(path)


def _load_dataset(cfg: RunConfig, need_truth: bool = False):
    """Return ``(events, trajectory, calibration, ground_truth or None)``."""
    files = (cfg.events, cfg.trajectory, cfg.calibration)
    if any(files):
        if not all(files):
            raise UsageError("events, trajectory and calibration must be given together")
        for f in files:
            if not Path(f).is_file():
                raise FileNotFoundError(f"input file not found: {f}")
        cal = parse_calibration(cfg.calibration)
        events = parse_events(cfg.events, cal)
        traj = parse_trajectory(cfg.trajectory)
        gt = synth.GroundTruth(_load_scene(cfg.scene), cal) if cfg.scene else None
        if need_truth and gt is None:
            raise UsageError("ground truth needed: pass --scene=<name or scene.json>")
        return events, traj, cal, gt
    if not cfg.scene:
        raise UsageError("no input: set events/trajectory/calibration or --scene")
    cal = synth.davis_calibration()
    events, traj, gt = synth.generate(_load_scene(cfg.scene), cal)
    return events, traj, cal, gt


# ---------------------------------------------------------------------------
# subcommands


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    events, traj, cal, _ = _load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def save(dm):
        written.append(write_depth_map(dm.depth, dm.confidence, out / f"depth_{len(written):04d}"))

    res = run_pipeline(events, traj, cal, cfg, on_depth_map=save)
    write_point_cloud(res.global_map.points, out / "map.ply")
    with open(out / "stats.jsonl", "w", encoding="ascii") as fh:
        for st in res.frame_stats:
            fh.write(json.dumps({"type": "frame", **asdict(st)}) + "\n")
        summary = res.summary.as_dict()
        fh.write(json.dumps({"type": "summary", **summary}) + "\n")
    (out / "run.cfg").write_text(cfg.to_text(), encoding="ascii")
    s = res.summary
    print(f"{s.frames} frames, {s.keyframes} key frames, {s.votes} votes, {s.misses} misses, "
          f"{s.depth_maps} depth maps, {s.points} points, {s.wall_time_s:.2f} s -> {out}")
    return EXIT_OK


def run_compare(events, traj, cal, gt, cfg: RunConfig, with_reference: bool = False) -> dict[str, float]:
    variants = list(COMPARE_VARIANTS) + ([REFERENCE_VARIANT] if with_reference else [])
    results = {}
    for name, changes in variants:
        res = run_pipeline(events, traj, cal, cfg.replace(**changes))
        results[name] = synth.pooled_abs_rel(res.depth_maps, gt)
        log.info("%s: AbsRel %.4f (%d depth maps, %.2f s)", name, results[name],
                 res.summary.depth_maps, res.summary.wall_time_s)
    return results


def _dataset_name(cfg: RunConfig) -> str:
    if cfg.scene in synth.BUILTIN_SCENES:
        return cfg.scene
    path = Path(cfg.scene or cfg.events).resolve()
    return path.parent.name if path.stem in ("scene", "events") else path.stem


def cmd_compare(args, cfg: RunConfig) -> int:
    events, traj, cal, gt = _load_dataset(cfg, need_truth=True)
    results = run_compare(events, traj, cal, gt, cfg, args.with_reference)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _dataset_name(cfg)
    cols = list(results)
    gaps = {
        "nearest_vs_bilinear_pp": 100 * abs(results["float_nearest"] - results["float_bilinear"]),
        "quantized_vs_float_pp": 100 * abs(results["quantized_nearest"] - results["float_nearest"]),
    }
    if "reference_bilinear" in results:
        gaps["reformulated_vs_reference_pp"] = 100 * abs(results["float_nearest"] - results["reference_bilinear"])
    header = ["dataset", *cols, *gaps]
    row = [dataset, *(f"{results[c]:.6f}" for c in cols), *(f"{v:.4f}" for v in gaps.values())]
    text = ",".join(header) + "\n" + ",".join(row) + "\n"
    (out / "compare.csv").write_text(text, encoding="ascii")
    sys.stdout.write(text)
    if not args.no_plot:
        from .plotting import plot_abs_rel

        plot_abs_rel(results, out / "compare.png", title=dataset)
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    name = cfg.scene or "3planes"
    if name in synth.BUILTIN_SCENES:
        kw = {}
        if args.density is not None:
            kw["density"] = args.density
        if args.seed is not None:
            kw["seed"] = args.seed
        scene = synth.BUILTIN_SCENES[name](**kw)
    else:
        scene = _load_scene(name)
        if args.seed is not None:
            scene.seed = args.seed
    if args.noise_rate is not None:
        scene.noise_rate = args.noise_rate
    cal = synth.davis_calibration()
    events, traj, _ = synth.generate(scene, cal)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_events(events, out / "events.txt")
    write_trajectory(traj, out / "trajectory.txt")
    write_calibration(cal, out / "calib.txt")
    (out / "scene.json").write_text(scene.to_json() + "\n", encoding="ascii")
    run_cfg = cfg.replace(events="events.txt", trajectory="trajectory.txt", calibration="calib.txt",
                          scene="scene.json", out="out", z_min=scene.z_min, z_max=scene.z_max)
    (out / "run.cfg").write_text(run_cfg.to_text(), encoding="ascii")
    print(f"{len(events)} events, {len(traj)} poses -> {out}")
    return EXIT_OK


def cmd_perf(args, cfg: RunConfig) -> int:
    mcfg = perf_model.ModelConfig(
        clock_hz=args.clock_hz, events_per_frame=cfg.events_per_frame,
        n_pe_zi=args.n_pe_zi, nz=args.nz if args.nz is not None else cfg.n_depth_planes,
    )
    rows = perf_model.report_rows(mcfg, args.from_table3, args.c_p0, args.c_vote)
    text = perf_model.format_csv(rows) if args.format == "csv" else perf_model.format_text(rows)
    sys.stdout.write(text)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "perf.csv").write_text(perf_model.format_csv(rows), encoding="ascii")
        if not args.no_plot:
            from .plotting import plot_latency

            plot_latency(rows, out / "perf.png")
    return EXIT_OK


COMMANDS = {"reconstruct": cmd_reconstruct, "compare": cmd_compare, "synth": cmd_synth, "perf": cmd_perf}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args, _split_overrides(extra))
        if args.dump_config:
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eventmvs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, ValidationError, ValueError, DegenerateGeometryError, OutOfRangeError) as exc:
        print(f"eventmvs: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
