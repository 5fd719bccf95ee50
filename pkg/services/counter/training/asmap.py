"""
Alignment-score maps: how strongly each query token attends to the background
token (AS) versus the exemplar tokens (1 - AS), laid out on the token grid.
"""

from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from errors import ConfigurationError, DataError
from models.sample_models import CountingSample
from network import ExemplarCounter
from objectives.losses import partition_tokens
from scenes.imaging import write_csv_grid, write_pgm16
from tensor.autograd import no_grad

PathLike = Union[str, Path]


class AlignmentMaps(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    alignment: np.ndarray  # [h, w]
    exemplar_mass: np.ndarray  # [h, w]


def alignment_maps(model: ExemplarCounter, sample: CountingSample) -> AlignmentMaps:
    config = model.config
    if not config.ablation.bt or config.encoder.layers == 0:
        raise ConfigurationError("alignment maps need a background token and at least one encoder layer")
    with no_grad():
        scores = model(sample).alignment.data
    grid = config.encoder.query_grid
    alignment = scores.reshape(grid)
    return AlignmentMaps(alignment=alignment, exemplar_mass=1.0 - alignment)


def export_asmap(model: ExemplarCounter, sample: CountingSample, out: PathLike) -> AlignmentMaps:
    """Writes asmap.csv / asmap.pgm and exemplar_mass.csv / exemplar_mass.pgm"""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"Cannot create output directory {out}: {e}") from e
    maps = alignment_maps(model, sample)
    write_csv_grid(out / "asmap.csv", maps.alignment)
    write_pgm16(out / "asmap.pgm", maps.alignment, value_range=(0.0, 1.0))
    write_csv_grid(out / "exemplar_mass.csv", maps.exemplar_mass)
    write_pgm16(out / "exemplar_mass.pgm", maps.exemplar_mass, value_range=(0.0, 1.0))
    logger.info(f"Wrote alignment maps for {sample.sample_id} to {out}")
    return maps


def region_alignment(model: ExemplarCounter, samples: Sequence[CountingSample]) -> Tuple[float, float]:
    """Mean AS over (target-patch tokens, background tokens) across samples"""
    enc = model.config.encoder
    target, background = [], []
    for sample in samples:
        scores = alignment_maps(model, sample).alignment.reshape(-1)
        mask = partition_tokens(sample.points, enc.patch_size, enc.query_grid).mask.astype(bool)
        target.extend(scores[mask].tolist())
        background.extend(scores[~mask].tolist())
    if not target or not background:
        raise DataError("region alignment needs both target and background tokens")
    return float(np.mean(target)), float(np.mean(background))
