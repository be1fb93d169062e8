"""Command-line entry point: ``dkbo <subcommand>``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .net import TrainConfig, TrainingError

TRACE_HELP = """\
trace files (traces/<variant>_<kernel>_<feedback>_runNN.jsonl), one JSON object per line:
  1st line  {"type": "config", ...run configuration...}
  each step {"type": "step", step, x, y, fz, roll, pitch, yaw, quality,
             sigma_r, sigma_w, length, ei, fallback, fit_failed, refit, seconds}
            step 0 marks the initial design; BO steps count from 1
  last line {"type": "summary", steps_to_hqr, hqr_count, best_final, wall_clock, aborted}
summary.csv columns:
  variant, kernel, feedback, run, steps_to_hqr, hqr_count, best_final, trace_file
  followed by per-condition aggregate rows with run = mean | sd
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dkbo", description="Deep-kernel Bayesian optimization of probe poses.",
                     epilog=TRACE_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("collect-dataset", help="scan phantoms at LHS poses (offline dataset)")
    p.add_argument("--variants", nargs="+", default=["P0", "P1"])
    p.add_argument("-n", "--n-per-variant", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train-kernel", help="train the deep-kernel network")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="weights file")
    p.add_argument("--curve", type=Path, help="learning-curve CSV (default: <out>.curve.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--split", type=float, default=0.9)

    p = sub.add_parser("run-experiment", help="run a kernel x feedback x phantom grid",
                       epilog=TRACE_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, help="override the configured output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, help="override the configured master seed")
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")

    p = sub.add_parser("report", help="curves and DK-vs-RBF table from a summary file")
    p.add_argument("summary", type=Path)
    p.add_argument("--out", type=Path, help="report directory (default: <summary dir>/report)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    return parser


def _collect(args):
    dataset = harness.collect_dataset(args.variants, args.n_per_variant, args.seed)
    harness.write_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} rows to {args.out}")


def _train(args):
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      split=args.split, seed=args.seed)
    _, curve = harness.train_kernel(args.dataset, args.out, cfg, curve_path=args.curve)
    print(f"final train MSE {curve.train[-1]:.5f}, val MSE {curve.val[-1]:.5f}; weights -> {args.out}")


def _run(args):
    exp = harness.load_config(args.config)
    if args.out is not None:
        exp.output_dir = args.out.resolve()
    if args.seed is not None:
        exp.master_seed = args.seed
    plan = list(exp.planned())
    if args.dry_run:
        print(f"{len(plan)} runs -> {exp.output_dir}")
        for variant, kernel, feedback, run, cfg in plan:
            print(f"  {variant} {kernel:<4} {feedback} run {run:02d} seed {cfg.seed}")
        return
    if "deep" in exp.kernels and not Path(exp.weights).exists():
        raise harness.ConfigError(f"weights file not found: {exp.weights}")
    harness.run_experiment(exp, workers=args.workers)
    print(f"{len(plan)} runs done; summary -> {exp.output_dir / 'summary.csv'}")


def _report(args):
    print(harness.report(args.summary, args.out, figures=args.figures), end="")


COMMANDS = {"collect-dataset": _collect, "train-kernel": _train,
            "run-experiment": _run, "report": _report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (harness.ConfigError, ValueError) as exc:
        print(f"dkbo: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"dkbo: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, RuntimeError, OSError) as exc:
        print(f"dkbo: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
