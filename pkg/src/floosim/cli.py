"""Command-line entry point.

Usage::

    floosim <preset> [--config FILE] [--out DIR] [--section.key=value ...]

Presets: latency-sweep, traffic, hbm-load, ordering-compare.  Flags of the
form ``--section.key=value`` override config-file values; FLOOSIM_SEED
overrides the seed.  Exit codes: 0 success, 1 configuration error,
2 deadlock, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ParseError, ValidationError, parse_config
from .endpoints import WorkloadParseError
from .engine import DeadlockError
from .fabric import InvalidConfig
from .presets import PRESETS, run_preset
from .protocol import ProtocolError
from .router import RoutingError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DEADLOCK = 2
EXIT_INTERNAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floosim",
        description="Cycle-accurate wide-link mesh NoC simulator",
    )
    sub = parser.add_subparsers(dest="preset", required=True, metavar="preset")
    for name in PRESETS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", default=None, help="INI config file")
        sp.add_argument("--out", default=f"results/{name}", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the run seed")
        sp.add_argument(
            "--dump-graph", action="store_true", help="write network.txt for debugging"
        )
        sp.add_argument(
            "--trace", action="store_true", help="write per-run flit trace CSVs"
        )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)

    overrides = []
    for item in extra:
        if item.startswith("--") and "=" in item and "." in item.split("=", 1)[0]:
            overrides.append(item[2:])
        else:
            parser.error(f"unrecognized argument: {item}")

    try:
        cfg = parse_config(args.config, overrides)
        if args.seed is not None:
            cfg.seed = args.seed
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.dump_graph:
            from .presets import make_network

            (out_dir / "network.txt").write_text(make_network(cfg).dump() + "\n")
        summary = run_preset(args.preset, cfg, out_dir, trace=args.trace)
    except (ParseError, ValidationError, InvalidConfig, WorkloadParseError, OSError) as e:
        print(f"floosim: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DeadlockError as e:
        print(f"floosim: {e}", file=sys.stderr)
        for line in e.result.blocked[:20]:
            print(f"  blocked: {line}", file=sys.stderr)
        return EXIT_DEADLOCK
    except (ProtocolError, RoutingError, AssertionError) as e:
        print(f"floosim: internal invariant violation: {e}", file=sys.stderr)
        return EXIT_INTERNAL

    for k, v in summary.items():
        if isinstance(v, (str, int, float)):
            print(f"{k}: {v}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
