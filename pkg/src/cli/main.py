"""
Command-line front end.

    gen-synth    write a synthetic dataset with simulated MC predictions
    train-toy    train a dropout-MLP ensemble (baseline | balanced | groupdro)
    predict-toy  draw ensemble-dropout predictions and write a manifest
    evaluate     sweep uncertainty thresholds and write curves, summary, charts

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
Diagnostics go to stderr; data goes to files only.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional, Sequence

from src.config.logging_config import configure_logging
from src.config.settings import EVAL_SETTINGS, STRATEGIES, TASKS, SynthConfig, TrainConfig
from src.data.model import Measure, Normalization
from src.evaluation.pipeline import run_evaluation
from src.mitigation.trainer import run_predict, run_train
from src.synth.generator import generate
from src.utils.errors import IoFailure, UqFairError, UsageError


logger = logging.getLogger(__name__)

MEASURE_CHOICES = [m.value for m in Measure if m is not Measure.PRECOMPUTED]
NORMALIZATION_CHOICES = [n.value for n in Normalization]


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> CliParser:
    parser = CliParser(prog="uqfair", description="Fairness of uncertainty estimates across subgroups")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    gen = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    gen.add_argument("--task", choices=TASKS, required=True)
    gen.add_argument("--m", type=int, default=50, help="group-0 instances")
    gen.add_argument("--l", type=int, default=50, help="group-1 instances")
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--targets", type=int, default=2)
    gen.add_argument("--features", type=int, default=2, help="feature dimension")
    gen.add_argument("--shift", type=float, nargs=2, default=(0.0, 0.0), metavar=("G0", "G1"))
    gen.add_argument("--noise", type=float, nargs=2, default=(0.0, 0.0), metavar=("G0", "G1"))
    gen.add_argument("--dims", type=int, nargs=3, default=(16, 16, 16), metavar=("P", "Q", "S"))
    gen.add_argument("--radii", type=float, nargs=3, default=(6.0, 4.0, 2.0), metavar=("WT", "TC", "ET"))
    gen.add_argument("--holdout", type=int, default=0, help="equal-size holdout instances per group")
    gen.add_argument("--mc-samples", type=int, default=60)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train-toy", help="train a toy ensemble")
    train.add_argument("--manifest", required=True)
    train.add_argument("--strategy", choices=STRATEGIES, default="baseline")
    train.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    train.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    train.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    train.add_argument("--eta-q", type=float, default=TrainConfig.groupdro_step)
    train.add_argument("--ensemble", type=int, default=TrainConfig.ensemble_size)
    train.add_argument("--samples", type=int, default=TrainConfig.dropout_samples)
    train.add_argument("--hidden", type=int, default=TrainConfig.hidden_width)
    train.add_argument("--dropout", type=float, default=TrainConfig.dropout_p)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--balance-strata", action="store_true",
                       help="balanced strategy on regression: balance (stratum, group) cells")
    train.add_argument("--out", required=True)

    predict = sub.add_parser("predict-toy", help="write MC predictions from a trained ensemble")
    predict.add_argument("--models", required=True)
    predict.add_argument("--manifest", help="evaluation manifest (default: the one recorded at training)")
    predict.add_argument("--out", required=True)

    evaluate = sub.add_parser("evaluate", help="sweep thresholds and report fairness curves")
    evaluate.add_argument("--manifest", required=True)
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--tau-step", type=float, default=EVAL_SETTINGS.tau_step)
    evaluate.add_argument("--measure", choices=MEASURE_CHOICES)
    evaluate.add_argument("--normalization", choices=NORMALIZATION_CHOICES)
    evaluate.add_argument("--threads", type=int, default=EVAL_SETTINGS.threads)
    return parser


def _gen_synth(args: argparse.Namespace) -> None:
    cfg = SynthConfig(
        task=args.task,
        n_per_group=(args.m, args.l),
        class_count=args.classes,
        target_count=args.targets,
        feature_dim=args.features,
        group_shift=tuple(args.shift),
        noise_sigma=tuple(args.noise),
        volume_dims=tuple(args.dims),
        sphere_radii=tuple(args.radii),
        holdout_per_group=args.holdout,
        mc_samples=args.mc_samples,
        seed=args.seed,
    )
    generate(cfg, args.out)


def _train_toy(args: argparse.Namespace) -> None:
    config = TrainConfig(
        strategy=args.strategy,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        groupdro_step=args.eta_q,
        ensemble_size=args.ensemble,
        dropout_samples=args.samples,
        hidden_width=args.hidden,
        dropout_p=args.dropout,
        seed=args.seed,
        balance_strata=args.balance_strata,
    )
    run_train(args.manifest, args.out, config)


def _predict_toy(args: argparse.Namespace) -> None:
    run_predict(args.models, args.out, args.manifest)


def _evaluate(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    run_evaluation(
        args.manifest,
        args.out,
        tau_step=args.tau_step,
        measure=Measure(args.measure) if args.measure else None,
        normalization=Normalization(args.normalization) if args.normalization else None,
        threads=args.threads,
    )


COMMANDS = {
    "gen-synth": _gen_synth,
    "train-toy": _train_toy,
    "predict-toy": _predict_toy,
    "evaluate": _evaluate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
        COMMANDS[args.command](args)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except UsageError as exc:
        logger.error("usage error: %s", exc)
        return exc.exit_code
    except UqFairError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return IoFailure.exit_code
    return 0


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
