"""Command-line frontend: pmelab <command> --config run.json --out DIR."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ConfigError, LabError
from .service import COMMANDS, EXIT_CONFIG, EXIT_VERDICT, execute, load_config


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmelab",
                                 description="Numerical laboratory for singular porous medium systems.")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=f"run the {cmd} command")
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default="pmelab-out", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker count")
        sp.add_argument("--fatal-unmet", action="store_true",
                        help="exit with status 3 when a precondition is unmet")
    sv = sub.add_parser("serve", help="serve the commands over HTTP")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn
        from .service import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
        data = json.loads(text)
        if isinstance(data, dict):
            data.setdefault("command", args.command)
            if data["command"] != args.command:
                raise ConfigError(f"command: config says {data['command']!r}, CLI says {args.command!r}")
        cfg = load_config(data, seed=args.seed)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for line in str(exc).split("; "):
            print(f"  {line}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = execute(cfg, jobs=args.jobs, fatal_unmet=args.fatal_unmet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LabError as exc:
        print(f"{cfg.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    os.makedirs(args.out, exist_ok=True)
    for name, text in sorted(result.files.items()):
        with open(os.path.join(args.out, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    for v in result.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.name} [{v.anchor}] {v.detail}".rstrip())
    print(f"exit {result.exit_code}; wrote {len(result.files)} file(s) to {args.out}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
