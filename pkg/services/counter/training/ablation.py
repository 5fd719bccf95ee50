"""
==============================================================================
COMPARISON SUITES
==============================================================================
Ablation suite: trains four variants on the same data and seeds

    baseline  mrm=0 bt=0 tbd=0   independent streams, shared extractor
    +MRM      mrm=1 bt=0 tbd=0
    +BT       mrm=1 bt=1 tbd=0
    +TBD      mrm=1 bt=1 tbd=1   full model

Shots suite: the full model trained with 0 (learnable tokens), 1, 2 and 3
exemplars.

Both report MAE / RMSE over the whole image and the target / non-target
regions, one row per (variant, seed), then mean, std and 95% confidence
half-width (1.96 std / sqrt(n)) rows per variant.
==============================================================================
"""

import csv
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from errors import DataError
from models.config_models import AblationVariant, TrainConfig
from models.report_models import EvalReport, SuiteRow
from models.sample_models import CountingSample
from scenes.dataset import Dataset
from training.evaluator import evaluate
from training.trainer import train

PathLike = Union[str, Path]

ABLATION_VARIANTS: List[Tuple[str, AblationVariant]] = [
    ("baseline", AblationVariant(mrm=False, bt=False, tbd=False)),
    ("+MRM", AblationVariant(mrm=True, bt=False, tbd=False)),
    ("+BT", AblationVariant(mrm=True, bt=True, tbd=False)),
    ("+TBD", AblationVariant(mrm=True, bt=True, tbd=True)),
]
METRIC_COLUMNS = ["all_mae", "all_rmse", "target_mae", "target_rmse", "nontarget_mae", "nontarget_rmse"]


def split_samples(dataset: Dataset) -> Tuple[List[CountingSample], List[CountingSample]]:
    """(train, eval); eval falls back to the training samples when there is no eval split"""
    train_samples = dataset.samples("train")
    eval_samples = dataset.samples("eval") if "eval" in dataset.splits else train_samples
    if not train_samples:
        raise DataError(f"Dataset {dataset.root} has an empty train split")
    return train_samples, eval_samples


def with_shots(config: TrainConfig, shots: int) -> TrainConfig:
    return config.with_changes(**{"encoder.shots": shots, "encoder.zero_shot": shots == 0})


def suite_row(variant: str, seed: Union[int, str], config: TrainConfig, report: EvalReport) -> SuiteRow:
    return SuiteRow(
        variant=variant,
        seed=str(seed),
        mrm=int(config.ablation.mrm),
        bt=int(config.ablation.bt),
        tbd=int(config.ablation.tbd),
        shots=config.encoder.shots,
        all_mae=report.mae,
        all_rmse=report.rmse,
        target_mae=report.target.mae,
        target_rmse=report.target.rmse,
        nontarget_mae=report.nontarget.mae,
        nontarget_rmse=report.nontarget.rmse,
    )


def run_variant(
    config: TrainConfig,
    train_samples: Sequence[CountingSample],
    eval_samples: Sequence[CountingSample],
    label: str,
    seed: int,
) -> SuiteRow:
    config = config.with_changes(seed=seed)
    logger.info(f"Suite run {label} seed={seed}")
    result = train(config, train_samples)
    report = evaluate(result.model, eval_samples, regions=True)
    return suite_row(label, seed, config, report)


def summarize(rows: Sequence[SuiteRow]) -> List[SuiteRow]:
    """Per-variant mean, std (sample) and 95% confidence half-width rows"""
    groups: Dict[str, List[SuiteRow]] = {}
    for row in rows:
        groups.setdefault(row.variant, []).append(row)
    summary = []
    for variant, members in groups.items():
        values = {c: np.array([getattr(r, c) for r in members]) for c in METRIC_COLUMNS}
        n = len(members)
        std = {c: float(v.std(ddof=1)) if n > 1 else 0.0 for c, v in values.items()}
        head = members[0]
        flags = {"mrm": head.mrm, "bt": head.bt, "tbd": head.tbd, "shots": head.shots}
        summary.append(SuiteRow(variant=variant, seed="mean", **flags, **{c: float(v.mean()) for c, v in values.items()}))
        summary.append(SuiteRow(variant=variant, seed="std", **flags, **std))
        summary.append(
            SuiteRow(variant=variant, seed="ci95", **flags, **{c: 1.96 * s / math.sqrt(n) for c, s in std.items()})
        )
    return summary


def write_suite_csv(rows: Sequence[SuiteRow], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(SuiteRow.model_fields))
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())
    logger.info(f"Wrote {len(rows)} rows to {path}")


def _finish(rows: List[SuiteRow], out_csv: Optional[PathLike]) -> List[SuiteRow]:
    rows = rows + summarize(rows)
    if out_csv is not None:
        write_suite_csv(rows, out_csv)
    return rows


def run_ablation_suite(
    base_config: TrainConfig,
    dataset: Dataset,
    seeds: Sequence[int] = (0,),
    out_csv: Optional[PathLike] = None,
) -> List[SuiteRow]:
    train_samples, eval_samples = split_samples(dataset)
    rows = []
    for label, variant in ABLATION_VARIANTS:
        config = base_config.with_changes(ablation=variant)
        for seed in seeds:
            rows.append(run_variant(config, train_samples, eval_samples, label, seed))
    return _finish(rows, out_csv)


def run_shots_suite(
    base_config: TrainConfig,
    dataset: Dataset,
    shots: Sequence[int] = (0, 1, 2, 3),
    seeds: Sequence[int] = (0,),
    out_csv: Optional[PathLike] = None,
) -> List[SuiteRow]:
    train_samples, eval_samples = split_samples(dataset)
    rows = []
    for n_shots in shots:
        config = with_shots(base_config, n_shots)
        for seed in seeds:
            rows.append(run_variant(config, train_samples, eval_samples, f"{n_shots}-shot", seed))
    return _finish(rows, out_csv)
