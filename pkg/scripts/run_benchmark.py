#!/usr/bin/env python3
"""Run the full generate/train/evaluate pipeline for one scenario.

Equivalent to calling the three CLI subcommands in order, with one flag to
wipe the output directory first so reruns start clean.  Determinism check:
run twice with --clean and diff the outputs; they must be byte-identical.

Usage:
    python3 scripts/run_benchmark.py scenarios/benchmark.cfg
    python3 scripts/run_benchmark.py scenarios/smoke.cfg --output-dir /tmp/smoke --clean
"""

import argparse
import shutil
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from marginsim.cli import main as cli_main
from marginsim.config import load_scenario


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("scenario", help="scenario config file")
    parser.add_argument("--output-dir", default=None,
                        help="override the scenario's output_dir")
    parser.add_argument("--clean", action="store_true",
                        help="delete the output directory before starting")
    args = parser.parse_args(argv)

    out_dir = args.output_dir or str(load_scenario(args.scenario).output_dir)
    if args.clean and Path(out_dir).exists():
        shutil.rmtree(out_dir)

    for stage in ("generate", "train", "evaluate"):
        print(f"--- {stage} ---")
        started = time.monotonic()
        code = cli_main([stage, args.scenario, "--output-dir", out_dir])
        if code != 0:
            return code
        print(f"[{stage} took {time.monotonic() - started:.1f}s]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
