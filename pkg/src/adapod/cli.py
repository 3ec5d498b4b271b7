"""Command-line entry point: ``adapod <subcommand> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from adapod.config import PRESETS, ConfigError, PipelineConfig, load_config, load_preset
from adapod.pipeline import PipelineError, compare, run_nonadaptive, run_pipeline

# subcommand -> last stage it runs
STAGE_OF = {
    "simulate": "simulate",
    "split": "split",
    "reduce": "reduce",
    "hjb": "hjb",
    "synthesize": "synthesize",
    "pipeline": "diagnostics",
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adapod", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGE_OF, "compare"):
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="key=value configuration file")
        src.add_argument("--preset", choices=PRESETS)
        p.add_argument("--out", type=Path, help="output directory (default: run.output)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key; may be repeated")
        if name in STAGE_OF:
            p.add_argument("--single", action="store_true", help="force one global basis")
    return parser


def _load(args) -> PipelineConfig:
    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key] = value
    return cfg.with_overrides(pairs).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"adapod: [config] {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(cfg.run.output)
    try:
        if args.command == "compare":
            adaptive, single, ratio = compare(cfg, out)
            print(f"adaptive residual={adaptive.residual!r} (K={adaptive.plan.K})")
            print(f"single residual={single.residual!r}")
            print(f"ratio={ratio!r}")
        else:
            runner = run_nonadaptive if args.single else run_pipeline
            res = runner(cfg, out, stop_after=STAGE_OF[args.command])
            if res.diagnostics is not None:
                sys.stdout.write(res.diagnostics.report())
            print(f"artifacts written to {out}")
    except PipelineError as exc:
        print(f"adapod: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
