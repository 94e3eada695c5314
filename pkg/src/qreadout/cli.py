"""Command-line entry point: ``qreadout <mode> --config PATH [--seed N] [--out DIR]``.

Exit status is 0 on success, 2 for configuration errors, 3 when a
numerical invariant breaks or a verification fails, and 1 for I/O
failures. Errors are printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import MODES, ConfigError, parse_config
from .core import InvariantBreach, ModelError
from .runner import VerificationFailed, run


def _error(kind: str, messages, code: int, step=None) -> int:
    payload = {"error": kind, "messages": list(messages)}
    if step is not None:
        payload["step"] = step
    print(json.dumps(payload), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qreadout", description="Continuous qubit readout experiments.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="JSON experiment description")
        p.add_argument("--seed", type=int, help="root seed, overrides the config")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        if mode in ("filter", "decide", "verify-quantum"):
            p.add_argument("--record", help="record.csv to use instead of simulating one")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        return _error("io", [f"cannot read {args.config}: {exc.strerror}"], 1)
    try:
        config = parse_config(text)
        if config.mode != args.mode:
            raise ConfigError([f"mode: config says {config.mode!r} but subcommand is {args.mode!r}"])
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(["--seed: must be a nonnegative integer below 2**64"])
            config = config.with_seed(args.seed)
    except ConfigError as exc:
        return _error("config", exc.errors, 2)
    try:
        summary = run(config, args.out, getattr(args, "record", None))
    except ConfigError as exc:
        return _error("config", exc.errors, 2)
    except VerificationFailed as exc:
        return _error("verification", [str(exc)], 3)
    except InvariantBreach as exc:
        return _error("invariant", [str(exc)], 3, exc.step)
    except ModelError as exc:
        return _error("config", [str(exc)], 2)
    except OSError as exc:
        return _error("io", [str(exc)], 1)
    print(f"{config.mode}: wrote {', '.join(summary.outputs)} in {summary.wall_time:.2f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
