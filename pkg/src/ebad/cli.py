"""Command-line front end.

Subcommands: train, detect, stream, eval, cluster-map. Every command
takes an optional config file plus ``--set key=value`` overrides;
frequently used keys have dedicated flags. Exit codes: 0 success,
2 configuration problems, 3 data problems, 4 bundle/config mismatch.
"""

import argparse
import os
import sys

from filelock import FileLock, Timeout

from . import __version__
from .config import build_config, parse_config_file
from .errors import BundleMismatchError, ConfigError, DataError
from .ingest import load_frames
from .pipeline import (
    check_bundle,
    load_bundle,
    run_detection,
    run_eval,
    save_bundle,
    train_bundle,
    write_cluster_maps,
    write_detection_artifacts,
)

LOCK_TIMEOUT = 600.0


def _add_common(parser):
    parser.add_argument("--config", help="config file of key=value lines")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")
    parser.add_argument("--mode", help="ead-rbm | ead-dbm | s-rbm | s-dbm")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--frames", help="directory of input frames")
    parser.add_argument("--bundle", help="model bundle directory")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--ground-truth", dest="ground_truth",
                        help="directory of ground-truth masks")
    parser.add_argument("--detections", help="directory of detection artifacts")
    parser.add_argument("--beta", type=float, help="patch anomaly threshold")
    parser.add_argument("--gamma", type=int, help="minimum component frame span")


def _overrides(args):
    values = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, _, value = item.partition("=")
        values[key.strip()] = value.strip()
    for key in ("mode", "seed", "frames", "bundle", "out",
                "ground_truth", "detections", "beta", "gamma"):
        value = getattr(args, key)
        if value is not None:
            values[key] = value
    return values


def _config(args):
    file_values = parse_config_file(args.config) if args.config else {}
    return build_config(file_values, _overrides(args))


def _require(cfg, key):
    value = getattr(cfg, key)
    if value is None:
        raise ConfigError(f"'{key}' must be set for this command")
    return value


def _bundle_lock(directory):
    os.makedirs(directory, exist_ok=True)
    return FileLock(os.path.join(directory, ".lock"), timeout=LOCK_TIMEOUT)


def cmd_train(args):
    cfg = _config(args)
    frames_dir = _require(cfg, "frames")
    bundle_dir = _require(cfg, "bundle")
    frames = load_frames(frames_dir, cfg.frame_size())
    try:
        with _bundle_lock(bundle_dir):
            bundle = train_bundle(frames, cfg)
            save_bundle(bundle, bundle_dir)
    except Timeout:
        raise DataError(f"bundle directory {bundle_dir} is locked") from None
    for si, ts in enumerate(bundle.scales):
        print(f"scale {ts.scale}: {ts.region_map.num_regions} regions")
    print(f"trained {cfg.mode} bundle ({len(frames)} frames) -> {bundle_dir}")
    return 0


def _load_checked_bundle(cfg):
    bundle_dir = _require(cfg, "bundle")
    try:
        with _bundle_lock(bundle_dir):
            bundle = load_bundle(bundle_dir)
    except Timeout:
        raise DataError(f"bundle directory {bundle_dir} is locked") from None
    check_bundle(bundle, cfg)
    return bundle


def _run_detection_command(args, stream):
    cfg = _config(args)
    bundle = _load_checked_bundle(cfg)
    frames_dir = _require(cfg, "frames")
    out_dir = _require(cfg, "out")
    frames = load_frames(frames_dir, cfg.frame_size())
    run, scorers = run_detection(frames, bundle, cfg, stream=stream)
    os.makedirs(out_dir, exist_ok=True)
    write_detection_artifacts(run, cfg, out_dir)
    if stream:
        for ts in bundle.scales:
            ts.region_rbms = dict(scorers[ts.scale].region_params)
        updated = os.path.join(out_dir, "updated_bundle")
        save_bundle(bundle, updated)
        print(f"updated models -> {updated}")
    flagged = int((run.frame_scores > 0).sum())
    print(f"{'streamed' if stream else 'detected'} {len(frames)} frames, "
          f"{flagged} flagged -> {out_dir}")
    return 0


def cmd_detect(args):
    return _run_detection_command(args, stream=False)


def cmd_stream(args):
    return _run_detection_command(args, stream=True)


def cmd_eval(args):
    cfg = _config(args)
    _require(cfg, "out")
    reports = run_eval(cfg)
    for report in reports:
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        eer = "n/a" if report.eer is None else f"{report.eer:.4f}"
        print(f"{report.level}: auc={auc} eer={eer}")
    return 0


def cmd_cluster_map(args):
    cfg = _config(args)
    bundle = _load_checked_bundle(cfg)
    out_dir = _require(cfg, "out")
    paths = write_cluster_maps(bundle, out_dir)
    for path in paths:
        print(path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ebad",
        description="Energy-based video anomaly detection",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, doc in (
        ("train", cmd_train, "train a model bundle on normal frames"),
        ("detect", cmd_detect, "score frames with a trained bundle"),
        ("stream", cmd_stream, "score frames while updating region models"),
        ("eval", cmd_eval, "compare detections against ground truth"),
        ("cluster-map", cmd_cluster_map, "export region maps as images"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ebad: config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"ebad: data error: {exc}", file=sys.stderr)
        return 3
    except BundleMismatchError as exc:
        print(f"ebad: bundle mismatch: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
