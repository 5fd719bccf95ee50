"""
==============================================================================
DATASET STORAGE
==============================================================================
On-disk layout:

    <root>/dataset.json              format_version, spec, seed, splits
    <root>/<sample_id>/query.mtnsr   [3, H, W]
    <root>/<sample_id>/exemplar_<i>.mtnsr
    <root>/<sample_id>/density.mtnsr [1, H, W]
    <root>/<sample_id>/annot.json    points, boxes, class ids, spec echo
==============================================================================
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from errors import DataError
from models.sample_models import CountingSample, SampleValidationError, SceneSpec
from scenes.fsc147_multi import is_multiclass
from scenes.generator import generate_scene
from tensor.serialization import load_tensor, save_tensor

PathLike = Union[str, Path]
FORMAT_VERSION = 1
MANIFEST = "dataset.json"


# ============================================================================
# SAMPLES
# ============================================================================

def save_sample(sample: CountingSample, path: PathLike) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_tensor(path / "query.mtnsr", sample.query)
    for i, exemplar in enumerate(sample.exemplars):
        save_tensor(path / f"exemplar_{i}.mtnsr", exemplar)
    save_tensor(path / "density.mtnsr", sample.density)
    annot = {
        "sample_id": sample.sample_id,
        "image_size": list(sample.image_size),
        "points": [list(p) for p in sample.points],
        "boxes": [list(b) for b in sample.boxes],
        "nontarget_points": [list(p) for p in sample.nontarget_points],
        "nontarget_classes": list(sample.nontarget_classes),
        "target_class": sample.target_class,
        "n_exemplars": len(sample.exemplars),
        "spec": sample.spec.model_dump(mode="json") if sample.spec is not None else None,
    }
    with open(path / "annot.json", "w", encoding="utf-8") as f:
        json.dump(annot, f, indent=2)
    return path


def load_sample(path: PathLike) -> CountingSample:
    path = Path(path)
    annot_path = path / "annot.json"
    if not annot_path.exists():
        raise DataError(f"Sample annotation not found: {annot_path}")
    try:
        with open(annot_path, "r", encoding="utf-8") as f:
            annot: Dict[str, Any] = json.load(f)
    except json.JSONDecodeError as e:
        raise SampleValidationError(f"{annot_path} is not valid JSON: {e}") from e

    query = load_tensor(path / "query.mtnsr")
    exemplars = [load_tensor(path / f"exemplar_{i}.mtnsr") for i in range(int(annot.get("n_exemplars", 0)))]
    density = load_tensor(path / "density.mtnsr")
    if list(query.shape[1:]) != list(annot.get("image_size", query.shape[1:])):
        raise SampleValidationError(f"{path}: annot image_size {annot.get('image_size')} vs query {query.shape}")
    try:
        return CountingSample(
            sample_id=annot.get("sample_id", path.name),
            query=query,
            exemplars=exemplars,
            boxes=[tuple(b) for b in annot.get("boxes", [])],
            points=[tuple(p) for p in annot.get("points", [])],
            density=density,
            nontarget_points=[tuple(p) for p in annot.get("nontarget_points", [])],
            nontarget_classes=annot.get("nontarget_classes", []),
            target_class=annot.get("target_class", 0),
            spec=SceneSpec.model_validate(annot["spec"]) if annot.get("spec") else None,
        )
    except ValidationError as e:
        raise SampleValidationError(f"{path}: invalid annotation: {e}") from e


# ============================================================================
# DATASETS
# ============================================================================

class Dataset(BaseModel):
    root: Path
    format_version: int = FORMAT_VERSION
    spec: Optional[SceneSpec] = None
    seed: int = 0
    splits: Dict[str, List[str]]

    def ids(self, split: Optional[str] = None) -> List[str]:
        if split is None:
            return [sample_id for ids in self.splits.values() for sample_id in ids]
        if split not in self.splits:
            raise DataError(f"Dataset {self.root} has no split '{split}' (have {sorted(self.splits)})")
        return list(self.splits[split])

    def samples(self, split: Optional[str] = None) -> List[CountingSample]:
        return [load_sample(self.root / sample_id) for sample_id in self.ids(split)]


def load_dataset(root: PathLike) -> Dataset:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.exists():
        raise DataError(f"Dataset manifest not found: {manifest}")
    try:
        with open(manifest, "r", encoding="utf-8") as f:
            data = json.load(f)
        dataset = Dataset(root=root, **data)
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise DataError(f"Invalid dataset manifest {manifest}: {e}") from e
    if dataset.format_version != FORMAT_VERSION:
        raise DataError(f"Unsupported dataset format {dataset.format_version}, expected {FORMAT_VERSION}")
    return dataset


def make_dataset(
    spec: SceneSpec,
    out: PathLike,
    n: int,
    seed: int = 0,
    eval_fraction: float = 0.25,
    multiclass_only: bool = False,
) -> Dataset:
    """Generate `n` scenes; sample i draws from default_rng([seed, i])"""
    if n < 1:
        raise DataError(f"dataset size must be positive, got {n}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ids: List[str] = []
    index = 0
    while len(ids) < n:
        if index >= 20 * n:
            raise DataError(f"only {len(ids)} of {n} scenes satisfied the multi-class rule")
        sample_id = f"s{index:05d}"
        sample = generate_scene(spec, np.random.default_rng([seed, index]), sample_id)
        index += 1
        if multiclass_only and not is_multiclass(sample, spec.min_nontarget_ratio or 0.2):
            continue
        save_sample(sample, out / sample_id)
        ids.append(sample_id)

    n_eval = int(round(eval_fraction * n)) if n > 1 else 0
    splits = {"train": ids[: n - n_eval]}
    if n_eval:
        splits["eval"] = ids[n - n_eval:]
    dataset = Dataset(root=out, spec=spec, seed=seed, splits=splits)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec": spec.model_dump(mode="json"),
        "seed": seed,
        "splits": splits,
    }
    with open(out / MANIFEST, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"Wrote dataset with {n} scenes to {out} ({len(splits['train'])} train, {n_eval} eval)")
    return dataset
