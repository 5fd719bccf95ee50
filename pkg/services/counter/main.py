"""
==============================================================================
EXEMPLAR COUNTING CLI
==============================================================================
Few-shot object counting with mutually-aware query / exemplar features.

Subcommands:
    gencfg    emit a documented train config template
    makedata  generate a synthetic multi-class dataset
    train     train a model, write checkpoint + metrics.jsonl
    eval      MAE / RMSE of a checkpoint on a dataset split
    asmap     export the alignment-score map of one sample
    ablate    baseline / +MRM / +BT / +TBD comparison table
    shots     0 / 1 / 2 / 3 exemplar comparison table
    inspect   dump a stored sample as PGM images

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
==============================================================================
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import yaml
from loguru import logger
from pydantic import ValidationError

from config import load_train_config, render_config_template, settings
from errors import ConfigurationError, CounterError
from logging_setup import add_file_sink, configure_logging
from models.config_models import TrainConfig
from models.sample_models import SceneSpec
from scenes.dataset import load_dataset, load_sample, make_dataset
from scenes.imaging import image_to_gray, write_pgm16
from training.ablation import run_ablation_suite, run_shots_suite
from training.asmap import export_asmap
from training.checkpoint import load_checkpoint
from training.evaluator import evaluate, write_predictions_csv
from training.trainer import train


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from e


def _train_config(path: str) -> TrainConfig:
    config = load_train_config(path)
    # COUNTER_PRECISION overrides the file when set explicitly
    if "precision" in settings.model_fields_set and settings.precision != config.precision:
        config = config.with_changes(precision=settings.precision)
    return config


def _scene_spec(value: str) -> SceneSpec:
    path = Path(value)
    if path.suffix in (".yml", ".yaml", ".json"):
        if not path.exists():
            raise ConfigurationError(f"Scene spec file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        try:
            return SceneSpec.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid scene spec {path}: {e}") from e
    return SceneSpec.preset(value, sigma=float(settings.get("scenes.sigma", 1.0)))


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_gencfg(args: argparse.Namespace) -> int:
    text = render_config_template(args.profile)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        logger.info(f"Wrote {args.profile} config template to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_makedata(args: argparse.Namespace) -> int:
    spec = _scene_spec(args.spec)
    make_dataset(
        spec,
        args.out,
        args.n,
        seed=args.seed,
        eval_fraction=args.eval_fraction,
        multiclass_only=args.multiclass_only,
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _train_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    add_file_sink(out / settings.get("training.log_name", "train.log"))
    dataset = load_dataset(args.data)
    train_samples = dataset.samples("train")
    eval_samples = dataset.samples("eval") if "eval" in dataset.splits else None
    train(config, train_samples, eval_samples, out=out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    samples = dataset.samples(args.split)
    report = evaluate(model, samples, regions=args.regions, dump_dir=args.dump_maps)
    if args.predictions:
        write_predictions_csv(report, args.predictions)
    document = json.dumps(report.to_json_dict(), indent=2)
    if args.report:
        Path(args.report).write_text(document + "\n", encoding="utf-8")
    sys.stdout.write(document + "\n")
    logger.info(f"MAE={report.mae:.4f} RMSE={report.rmse:.4f} over {report.n} images")
    return 0


def cmd_asmap(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.ckpt)
    export_asmap(model, load_sample(args.sample), args.out)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _train_config(args.config)
    run_ablation_suite(config, load_dataset(args.data), seeds=args.seeds, out_csv=args.out)
    return 0


def cmd_shots(args: argparse.Namespace) -> int:
    config = _train_config(args.config)
    run_shots_suite(config, load_dataset(args.data), shots=args.shots, seeds=args.seeds, out_csv=args.out)
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    sample = load_sample(args.sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm16(out / "query.pgm", image_to_gray(sample.query), value_range=(0.0, 1.0))
    write_pgm16(out / "density.pgm", sample.density[0])
    for i, exemplar in enumerate(sample.exemplars):
        write_pgm16(out / f"exemplar_{i}.pgm", image_to_gray(exemplar), value_range=(0.0, 1.0))
    logger.info(
        f"{sample.sample_id}: {sample.count} targets, {len(sample.nontarget_points)} distractors, "
        f"density mass {float(sample.density.sum()):.4f}"
    )
    return 0


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    default_seeds = ",".join(str(s) for s in settings.get("suites.seeds", [0, 1, 2, 3, 4]))
    parser = argparse.ArgumentParser(prog="counter", description="Few-shot object counting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gencfg", help="Emit a train config template")
    p.add_argument("--profile", choices=["desk", "minimal", "full"], default="desk")
    p.add_argument("--out", help="Write to this file instead of stdout")
    p.set_defaults(func=cmd_gencfg)

    p = sub.add_parser("makedata", help="Generate a synthetic dataset")
    p.add_argument("--spec", default=settings.get("scenes.preset", "multi"),
                   help="Preset (multi, single, transfer) or a YAML scene spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-fraction", type=float, default=float(settings.get("suites.eval_fraction", 0.25)))
    p.add_argument("--multiclass-only", action="store_true", help="Keep only scenes passing the multi-class rule")
    p.set_defaults(func=cmd_makedata)

    p = sub.add_parser("train", help="Train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None, help="Dataset split (default: all samples)")
    p.add_argument("--regions", action="store_true", default=bool(settings.get("evaluation.regions", False)))
    p.add_argument("--predictions", help="Write per-image counts to this CSV file")
    p.add_argument("--dump-maps", help="Write predicted density maps (MTNSR1 + PGM) to this directory")
    p.add_argument("--report", help="Also write the JSON report to this file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("asmap", help="Export the alignment-score map of a sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_asmap)

    p = sub.add_parser("ablate", help="Run the component ablation suite")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seeds", type=_int_list, default=_int_list(default_seeds))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("shots", help="Run the exemplar-count suite")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--shots", type=_int_list, default=[0, 1, 2, 3])
    p.add_argument("--seeds", type=_int_list, default=_int_list(default_seeds))
    p.set_defaults(func=cmd_shots)

    p = sub.add_parser("inspect", help="Dump a stored sample as PGM images")
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging(settings.log_level)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CounterError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
