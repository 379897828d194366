"""Command line front end.

    nullgenus run      --config cfg.yaml --target all --out out/
    nullgenus periods  --surface torus
    nullgenus jacobian --surface torus
    nullgenus solve    --surface sphere --target c2 --c 0.01
    nullgenus mesh     --surface torus --resolution 96
    nullgenus certify  --config cfg.yaml

Exit codes: 0 PASS, 2 validation error, 3 numerical failure, 4 io error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import PipelineConfig, from_dict, load_config
from .errors import ConfigError, NullGenusError, OutputError

log = logging.getLogger("nullgenus")

COMMANDS = {
    "run": "full pipeline with every artifact (JSON, CSV, OBJ, SVG, PNG)",
    "periods": "surface, forms, disk and the period matrix",
    "jacobian": "adds the three period Jacobians and their finite-difference checks",
    "solve": "adds period killing along the c ramp for each target",
    "mesh": "adds the traced domain, its boundary topology and contour plots",
    "certify": "adds realizations and certificates; writes the report only",
}
FORMATS = {
    "run": ("json", "csv", "obj", "svg", "png"),
    "periods": ("json", "csv"),
    "jacobian": ("json", "csv"),
    "solve": ("json", "csv", "png"),
    "mesh": ("json", "csv", "svg", "png"),
    "certify": ("json", "csv"),
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="YAML configuration file")
    p.add_argument("--surface", choices=["sphere", "torus"], help="override the surface backend")
    p.add_argument("--target", choices=["c2", "r3", "l3", "all"], help="realization target(s)")
    p.add_argument("--c", type=float, metavar="VALUE",
                   help="requested c; the ramp is cut below VALUE and ends at VALUE")
    p.add_argument("--out", metavar="DIR", help="output directory (default from config, 'out')")
    p.add_argument("--workers", type=int, metavar="N", help="targets processed in parallel")
    p.add_argument("--seed", type=int, metavar="N", help="seed for sampling")
    p.add_argument("--resolution", type=int, metavar="N", help="mesh resolution")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nullgenus",
        description="Bounded complete null curves in C^3, their C^2 projections, and the derived "
                    "minimal surfaces and maxfaces, built on the sphere or a torus.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, helptext in COMMANDS.items():
        _common(sub.add_parser(name, help=helptext, description=helptext))
    return parser


def resolve_config(args) -> PipelineConfig:
    """Config file (or defaults) with command line overrides applied."""
    cfg = load_config(args.config) if args.config else from_dict({})
    data = cfg.to_dict()
    if args.config is None or "ramp" not in _raw_keys(args.config):
        data["ramp"] = None
    if args.surface:
        data["surface"] = args.surface
    if args.target:
        data["targets"] = ["C2", "R3", "L3"] if args.target == "all" else [args.target.upper()]
    if args.out:
        data["output"] = args.out
    if args.workers is not None:
        data["workers"] = args.workers
    if args.seed is not None:
        data["seed"] = args.seed
    if args.resolution is not None:
        data["mesh"]["resolution"] = args.resolution
    cfg = from_dict(data)
    if args.c is not None:
        if not args.c > 0:
            raise ConfigError(f"--c must be positive, got {args.c}")
        ramp = [c for c in cfg.c_ramp if c < args.c] + [args.c]
        data = cfg.to_dict()
        data["ramp"] = ramp
        cfg = from_dict(data)
    return cfg


def _raw_keys(path) -> set:
    import yaml

    with open(path) as fh:
        return set((yaml.safe_load(fh) or {}).keys())


def _summary(result) -> list:
    lines = []
    for name, st in result.stages.items():
        lines.append(f"{name:10s} {'pass' if st.passed else 'FAIL'}")
    for t, blocks in result.targets.items():
        used = blocks["solve"].data.get("c_used")
        for name, st in blocks.items():
            extra = f"  c={used:g}" if name == "solve" and used is not None else ""
            lines.append(f"{t}/{name:7s} {'pass' if st.passed else 'FAIL'}{extra}")
    return lines


def _first_error(result):
    blocks = list(result.stages.values()) + [s for b in result.targets.values() for s in b.values()]
    return next((s.error for s in blocks if s.error is not None), None)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .export import export_artifacts
    from .pipeline import run_pipeline

    try:
        cfg = resolve_config(args)
        mode = "certify" if args.command == "run" else args.command
        result = run_pipeline(cfg, stop_after=mode)
        paths = export_artifacts(result, cfg.output, formats=FORMATS[args.command])
    except OutputError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NullGenusError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    for line in _summary(result):
        print(line)
    if not result.passed:
        err = _first_error(result)
        if err:
            print(f"{result.failed_stage}: {err['code']}: {err['message']}", file=sys.stderr)
    status = "PASS" if result.passed else f"FAIL at {result.failed_stage}"
    print(f"{status}; {len(paths)} files in {cfg.output}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
