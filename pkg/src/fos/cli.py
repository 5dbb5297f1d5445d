"""Command-line entry point: per-stage subcommands plus the end-to-end
pipeline driver. Exit codes: 0 success, 2 invalid configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .lddmm import ShootingError
from .pipeline import (ConfigError, PipelineConfig, emit_covariation,
                       emit_mode_visualization, emit_sphere_benchmark,
                       run_pipeline, STAGES)
from .tangent_fem import FemError


def _add_config_args(parser):
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--output-dir", help="artifact directory "
                        "(overrides the config value)")
    parser.add_argument("--seed", type=int, help="root seed override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fos",
        description="Analysis of functions on surfaces: simulation, "
                    "registration, fPCA and co-variation stages.")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_config_args(p)
        if stage == "register-fun":
            p.add_argument("--emit-sphere-benchmark", action="store_true",
                           help="generate and register the spherical "
                                "two-band benchmark instead of the "
                                "configured dataset")

    p = sub.add_parser("pipeline", help="run all configured stages")
    _add_config_args(p)
    p.add_argument("--from-stage", choices=STAGES,
                   help="resume from this stage (reuse earlier artifacts)")

    p = sub.add_parser("covary", help="export co-variation sequences")
    _add_config_args(p)
    p.add_argument("--pair", type=int, default=1,
                   help="canonical pair (1-based)")
    p.add_argument("--t-grid", default="-2,-1,0,1,2",
                   help="comma-separated grid in variate-sd units")

    p = sub.add_parser("viz-mode", help="export a geometric mode of "
                       "variation as mesh+field pairs")
    _add_config_args(p)
    p.add_argument("--mode", type=int, default=1, help="mode index (1-based)")
    p.add_argument("--c-grid", default="-1,-0.5,0,0.5,1",
                   help="comma-separated multiples of the mode s.d.")
    return parser


def _load_config(args) -> PipelineConfig:
    if args.config:
        cfg = PipelineConfig.from_json(args.config)
    else:
        cfg = PipelineConfig()
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "pipeline":
            stages = cfg.stages
            if args.from_stage:
                idx = STAGES.index(args.from_stage)
                stages = tuple(s for s in stages if STAGES.index(s) >= idx)
            manifest = run_pipeline(cfg, stages)
            print(json.dumps(manifest, indent=1))
        elif args.command in STAGES:
            if getattr(args, "emit_sphere_benchmark", False):
                path, summary = emit_sphere_benchmark(cfg.output_dir)
                print(json.dumps({"benchmark_dir": path,
                                  "summary": summary}, indent=1))
            else:
                manifest = run_pipeline(cfg, (args.command,))
                print(json.dumps(manifest["stages"][args.command], indent=1))
        elif args.command == "covary":
            t = [float(x) for x in args.t_grid.split(",")]
            path = emit_covariation(cfg.output_dir, args.pair - 1, t)
            print(path)
        elif args.command == "viz-mode":
            grid = [float(x) for x in args.c_grid.split(",")]
            files = emit_mode_visualization(cfg.output_dir, args.mode - 1,
                                            grid)
            print("\n".join(files))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ShootingError, FemError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        cause = exc.__cause__
        if isinstance(cause, ConfigError):
            print(f"configuration error: {cause}", file=sys.stderr)
            return 2
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
