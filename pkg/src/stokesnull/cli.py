"""Command-line entry point: ``stokesnull run|validate|schema``.

Exit codes: 0 success, 1 a run finished but an invariant check failed,
2 invalid configuration, 3 output directory not writable.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import ConfigError, load, schema_doc, validate

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _load(path, seed=None):
    cfg = load(path)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    return cfg


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config, args.seed)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate(cfg)
    for d in diags:
        print(d)
    if not diags:
        print("ok")
    return EXIT_CONFIG if diags else EXIT_OK


def cmd_run(args) -> int:
    from .runner import run

    try:
        cfg = _load(args.config, args.seed)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate(cfg)
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = run(cfg, output_dir=args.output, jobs=args.jobs)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {outcome.directory}")
    if not outcome.ok:
        for name in outcome.failed:
            print(f"check failed: {name} ({outcome.summary['checks'][name]['value']})", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_schema(args) -> int:
    print(schema_doc())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stokesnull", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config", help="key = value configuration file")
    r.add_argument("-o", "--output", help="override output_dir")
    r.add_argument("-j", "--jobs", type=int, default=1, help="concurrent sweep points (default 1)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("schema", help="list configuration keys")
    s.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
