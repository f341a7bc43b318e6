"""Command-line entry point: catalogue inspection, reference training,
audit execution and report rendering.

Exit codes: 0 all executed requirements pass, 1 at least one fail,
2 configuration/validation error, 3 runtime error verdict without a fail.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import engine
from .catalogue import (
    AsilLevel,
    CatalogueError,
    RecommendationGrade,
    load_catalogue,
    select_requirements,
)
from .dataset import DatasetError, SplitError, load_image_folder, split_dataset
from .engine import ConfigError
from .model import TrainConfig, train_reference

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_ERROR = 3

logger = logging.getLogger(__name__)


def _apply_thread_cap():
    cap = os.environ.get("AIAUDIT_THREADS")
    if cap:
        try:
            import torch

            torch.set_num_threads(max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"AIAUDIT_THREADS must be an integer, got {cap!r}")


def _format_catalogue_rows(requirements) -> str:
    lines = ["id  scope          A   B   C   D   text"]
    for req in requirements:
        grades = "  ".join(f"{req.grades[lvl].value:<2}" for lvl in AsilLevel)
        lines.append(f"{req.id:<3} {req.scope.value:<14} {grades}  {req.text}")
    if len(lines) == 1:
        return lines[0] + "\n(no requirements)\n"
    return "\n".join(lines) + "\n"


def cmd_catalogue(args) -> int:
    catalogue = load_catalogue(args.path)
    if args.subcommand == "list":
        sys.stdout.write(_format_catalogue_rows(catalogue.requirements))
        return EXIT_OK
    selected = select_requirements(
        catalogue, AsilLevel(args.risk), RecommendationGrade(args.min_grade)
    )
    sys.stdout.write(_format_catalogue_rows(selected))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig(
        epochs=args.epochs,
        seed=args.seed,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
    )
    items = load_image_folder(
        args.dataset_root, args.classes, resolution=args.resolution
    )
    train, val, _test = split_dataset(items, tuple(args.fractions), args.seed)
    model = train_reference(train, val, cfg, num_classes=args.classes)
    output = Path(args.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    model.save(output)
    sys.stdout.write(f"checkpoint written to {output}\n")
    return EXIT_OK


def cmd_audit(args) -> int:
    config = engine.load_audit_config(args.config)
    for key, value in (
        ("risk_level", args.risk),
        ("min_grade", args.min_grade),
        ("model_checkpoint", args.model_checkpoint),
        ("dataset_root", args.dataset_root),
    ):
        if value is not None:  # flag overrides config file
            config[key] = value
    report = engine.run_audit(config)
    report["effective_config"] = config
    engine.save_report(report, args.output)
    sys.stdout.write(engine.render_summary(report))
    sys.stdout.write(f"report written to {args.output}\n")
    return engine.exit_status(report)


def cmd_report(args) -> int:
    report = engine.load_report(args.path)
    if args.format == "summary":
        sys.stdout.write(engine.render_summary(report))
    else:
        sys.stdout.write(engine.render_text(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aiaudit",
        description="Audit image classifiers against a risk-graded requirement catalogue.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cat = sub.add_parser("catalogue", help="inspect a requirement catalogue")
    cat_sub = p_cat.add_subparsers(dest="subcommand", required=True)
    p_list = cat_sub.add_parser("list", help="print all requirements")
    p_list.add_argument("path", help="catalogue JSON file")
    p_sel = cat_sub.add_parser("select", help="print the risk-based selection")
    p_sel.add_argument("path", help="catalogue JSON file")
    p_sel.add_argument("--risk", required=True, choices=[l.value for l in AsilLevel])
    p_sel.add_argument(
        "--min-grade", required=True, choices=[g.value for g in RecommendationGrade]
    )
    p_cat.set_defaults(func=cmd_catalogue)

    p_train = sub.add_parser("train", help="train the reference classifier")
    p_train.add_argument("--dataset-root", required=True)
    p_train.add_argument("--output", required=True, help="checkpoint path")
    p_train.add_argument("--classes", type=int, default=43)
    p_train.add_argument("--resolution", type=int, default=32)
    p_train.add_argument("--epochs", type=int, default=15)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--learning-rate", type=float, default=1e-3)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument(
        "--fractions", type=float, nargs=3, default=[0.8, 0.1, 0.1],
        metavar=("TRAIN", "VAL", "TEST"),
    )
    p_train.set_defaults(func=cmd_train)

    p_audit = sub.add_parser("audit", help="run the configured audit")
    p_audit.add_argument("--config", required=True, help="audit configuration JSON")
    p_audit.add_argument("--output", required=True, help="report JSON path")
    p_audit.add_argument("--risk", choices=[l.value for l in AsilLevel])
    p_audit.add_argument(
        "--min-grade", choices=[g.value for g in RecommendationGrade]
    )
    p_audit.add_argument("--model-checkpoint")
    p_audit.add_argument("--dataset-root")
    p_audit.set_defaults(func=cmd_audit)

    p_report = sub.add_parser("report", help="render a written report")
    p_report.add_argument("path", help="report JSON file")
    p_report.add_argument("--format", choices=["text", "summary"], default="summary")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(message)s", stream=sys.stdout, force=True
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except (CatalogueError, ConfigError, DatasetError, SplitError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
