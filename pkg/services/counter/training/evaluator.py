"""
Evaluation runner: per-image predicted counts, MAE / RMSE, optional target /
non-target region split.

Images fan out over COUNTER_THREADS worker threads; parameters are read-only
during evaluation and results are gathered in input order.
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from config import settings
from errors import DataError
from models.report_models import EvalReport, ImagePrediction
from models.sample_models import CountingSample
from network import ExemplarCounter
from objectives.metrics import build_report, region_eval, region_masks
from scenes.imaging import write_pgm16
from tensor.autograd import no_grad
from tensor.serialization import save_tensor

PathLike = Union[str, Path]


def predict_sample(
    model: ExemplarCounter, sample: CountingSample, regions: bool = False
) -> Tuple[ImagePrediction, np.ndarray]:
    with no_grad():
        density = model(sample).density.data
    record = ImagePrediction(
        sample_id=sample.sample_id,
        predicted=float(density.sum()),
        ground_truth=float(sample.count),
    )
    if regions:
        # expand points by the boxes the model was shown; 0-shot falls back to every stored box
        _, shown = model.select_exemplars(sample)
        masks = region_masks(sample.points, shown or sample.box_sizes, sample.image_size)
        counts = region_eval(density, sample.density, masks)
        record.target_predicted = counts.target_predicted
        record.target_ground_truth = counts.target_ground_truth
        record.nontarget_predicted = counts.nontarget_predicted
        record.nontarget_ground_truth = counts.nontarget_ground_truth
    return record, density


def evaluate(
    model: ExemplarCounter,
    samples: Sequence[CountingSample],
    regions: bool = False,
    threads: Optional[int] = None,
    dump_dir: Optional[PathLike] = None,
) -> EvalReport:
    if not samples:
        raise DataError("evaluation needs at least one sample")
    workers = max(1, threads if threads is not None else settings.threads)
    if workers == 1:
        results = [predict_sample(model, s, regions) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: predict_sample(model, s, regions), samples))

    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for record, density in results:
            save_tensor(dump_dir / f"{record.sample_id}.mtnsr", density)
            write_pgm16(dump_dir / f"{record.sample_id}.pgm", density[0])
        logger.info(f"Wrote {len(results)} predicted density maps to {dump_dir}")

    report = build_report([record for record, _ in results])
    logger.debug(f"Evaluated {report.n} images: MAE={report.mae:.4f} RMSE={report.rmse:.4f}")
    return report


def write_predictions_csv(report: EvalReport, path: PathLike) -> None:
    columns = list(ImagePrediction.model_fields)
    lines = [",".join(columns)]
    for record in report.predictions:
        values = record.model_dump()
        lines.append(",".join("" if values[c] is None else str(values[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

