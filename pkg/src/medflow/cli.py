"""Command-line entry point: ``medflow {gen-suite,fit,evaluate,report,run}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import ExperimentConfig
from .flow import DomainError
from .optim import FitDivergence


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; keys override the packaged defaults")
    common.add_argument("--out", help="output directory (overrides out_dir)")
    common.add_argument("--jobs", type=int, help="worker processes for independent fits")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="medflow", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-suite", parents=[common], help="generate synthetic targets and manifest")
    fit = sub.add_parser("fit", parents=[common], help="run fits (all, or one with --case/--seed/--lambda)")
    fit.add_argument("--case", help="case id, e.g. case00")
    fit.add_argument("--seed", type=int, help="initialization seed")
    fit.add_argument("--lambda", dest="lam", type=float, help="path-length regularizer weight")
    fit.add_argument("--draw", type=int, help="retest draw index (fits a perturbed target)")
    sub.add_parser("evaluate", parents=[common], help="compute metrics.csv and per-vertex fields")
    sub.add_parser("report", parents=[common], help="compare lambdas against the baseline")
    sub.add_parser("run", parents=[common], help="gen-suite, fit, evaluate and report")
    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = ExperimentConfig.load(args.config, out_dir=args.out, jobs=args.jobs)
    try:
        if args.command == "show-config":
            sys.stdout.write(cfg.dumps())
        elif args.command == "gen-suite":
            m = harness.gen_suite(cfg)
            print(f"wrote {len(m['cases'])} cases to {cfg.manifest_path}")
        elif args.command == "fit":
            single = (args.case, args.seed, args.lam)
            if any(x is not None for x in single):
                if any(x is None for x in single):
                    print("error: --case, --seed and --lambda must be given together", file=sys.stderr)
                    return 2
                print(json.dumps(harness.cmd_fit(cfg, args.case, args.seed, args.lam, args.draw)))
            else:
                results = harness.run_fits(cfg, harness.fit_tasks(cfg))
                print(f"completed {len(results)} fits")
        elif args.command == "evaluate":
            table = harness.cmd_evaluate(cfg)
            sys.stdout.write(table.to_csv())
        elif args.command == "report":
            sys.stdout.write(harness.format_report(harness.cmd_report(cfg)))
        elif args.command == "run":
            sys.stdout.write(harness.format_report(harness.run_all(cfg)))
    except (FitDivergence, DomainError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    except (harness.MissingRunsError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
