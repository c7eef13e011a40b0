"""Command-line entry point.

Usage: dcasr <stage> --config <path> [--seed <u64>] [--out <dir>]
where <stage> is one of simulate-log, train-diffusion, train-scm, train-sr,
augment, eval-offline, eval-online, run-all.

Exit codes: 0 success, 2 config error, 3 data error, 4 dependency error,
5 numeric error.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, DataError, DependencyError, NumericError
from .pipeline import STAGES, run_pipeline


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dcasr")
    parser.add_argument("stage", choices=list(STAGES) + ["run-all"])
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        run_pipeline(cfg, args.stage, seed=args.seed, out_dir=args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except DependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return 4
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
