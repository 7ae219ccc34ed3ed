"""Command-line entry point: one subcommand per experiment kind.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 the run
diverged or the simulation could not be set up.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import KINDS, PRESETS, ConfigError, load_config
from .harness import export_scenes, run_experiment
from .simulation import SceneGenerationError
from .ssl_loop import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILED = 3


def parse_seeds(text: str) -> list:
    """``"0,1,5"`` or ``"0-9"`` or a mix such as ``"0-3,7"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def _seed_arg(text: str) -> list:
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML configuration file (sections mirror the defaults)")
    p.add_argument("--preset", choices=PRESETS, default="default", help="base preset (default: %(default)s)")
    p.add_argument("-s", "--seeds", type=_seed_arg, help="seed list, e.g. 0-9 or 0,3,7")
    p.add_argument("-o", "--out", help="output directory (default: <output_dir>/<kind>)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-key override, repeatable (e.g. teacher.rho_cls=0.5)")
    p.add_argument("-j", "--jobs", type=int, help="worker processes across seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudolabel3d",
        description="Desk-scale pseudo-label experiments for semi-supervised 3D detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "threshold-sweep": "fixed confidence thresholds versus the dynamic schedule",
        "schedule-ablation": "high-to-low versus low-to-high threshold schedules",
        "strategy-ablation": "sparse/dense x fixed/dynamic pseudo-label strategies",
        "fpfn-sweep": "false positives and false negatives across thresholds",
        "toy-ssl-loop": "teacher-student training of a toy detector versus labeled-only",
    }
    for kind in KINDS:
        p = sub.add_parser(kind, help=helps[kind])
        _common(p)
        p.add_argument("-q", "--quiet", action="store_true", help="do not print the summary")
    p = sub.add_parser("export-scenes", help="write simulated scenes and proposals as KITTI label files")
    _common(p)
    p.add_argument("-n", "--num-scenes", type=int, default=10)
    p.add_argument("--iteration", type=int, default=0, help="teacher iteration used for the proposals")
    p = sub.add_parser("show-config", help="print the resolved configuration as YAML")
    _common(p)
    p.add_argument("--kind", choices=KINDS)
    return parser


def _resolve(args, kind: str | None):
    overrides = list(args.overrides)
    if args.seeds is not None:
        overrides.append("seeds=[" + ",".join(str(s) for s in args.seeds) + "]")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    return load_config(args.config, overrides, preset=args.preset, kind=kind)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kind = args.command if args.command in KINDS else getattr(args, "kind", None)
    try:
        cfg = _resolve(args, kind)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "show-config":
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK

    out_dir = args.out or os.path.join(cfg.output_dir, args.command)
    try:
        if args.command == "export-scenes":
            if args.num_scenes < 1 or args.iteration < 0:
                print("error: --num-scenes must be >= 1 and --iteration >= 0", file=sys.stderr)
                return EXIT_CONFIG
            ids = export_scenes(cfg, out_dir, args.num_scenes, args.iteration)
            print(f"wrote {len(ids)} scenes to {out_dir}")
            return EXIT_OK
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: run diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except SceneGenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    paths = report.write(out_dir)
    if not args.quiet:
        sys.stdout.write(report.summary_text())
        print(f"\nwrote {len(paths)} files to {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
