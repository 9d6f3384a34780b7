#!/usr/bin/env python3
import argparse
import sys
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

from src.acceptance import run_acceptance  # noqa: E402
from src.common import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, SolverError  # noqa: E402


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="run_acceptance", description="Evaluate the acceptance criteria")
    parser.add_argument("--quick", action="store_true", help="refinements 1-2 only")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="acceptance.json")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_CONFIG

    print(f"\n🚀 Running acceptance ({'quick' if args.quick else 'full'} grid)")
    try:
        report = run_acceptance(quick=args.quick, seed=args.seed)
    except SolverError as e:
        print(f"❌ Numerical failure: {e.detail}")
        return EXIT_NUMERICAL

    Path(args.out).write_text(report.model_dump_json(indent=2) + "\n")
    passed = sum(c.passed for c in report.criteria)
    print(f"\n{'🎉' if report.passed else '⚠️'} {passed}/{len(report.criteria)} criteria passed ({report.seconds:.0f}s) -> {args.out}")
    return EXIT_OK if report.passed else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
