"""
Checkpoint directories: params.mtnsra (named-tensor archive), config.yml
(the train config that built the model) and metrics.jsonl.
"""

from pathlib import Path
from typing import Tuple, Union

from loguru import logger

from config import dump_train_config, load_train_config, settings
from errors import DataError
from models.config_models import TrainConfig
from network import ExemplarCounter, build_model
from tensor.serialization import load_archive, save_archive

PathLike = Union[str, Path]


def params_path(ckpt: PathLike) -> Path:
    return Path(ckpt) / settings.get("training.checkpoint_name", "params.mtnsra")


def config_path(ckpt: PathLike) -> Path:
    return Path(ckpt) / settings.get("training.config_name", "config.yml")


def metrics_path(ckpt: PathLike) -> Path:
    return Path(ckpt) / settings.get("training.metrics_name", "metrics.jsonl")


def save_checkpoint(model: ExemplarCounter, out: PathLike) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_archive(params_path(out), model.state_dict())
    dump_train_config(model.config, config_path(out))
    logger.info(f"Saved checkpoint with {len(model.parameters())} tensors to {out}")
    return out


def load_checkpoint(ckpt: PathLike) -> Tuple[ExemplarCounter, TrainConfig]:
    ckpt = Path(ckpt)
    if not params_path(ckpt).exists():
        raise DataError(f"No checkpoint parameters at {params_path(ckpt)}")
    config = load_train_config(config_path(ckpt))
    model = build_model(config)
    model.load_state_dict(load_archive(params_path(ckpt)))
    logger.info(f"Loaded checkpoint from {ckpt}")
    return model, config
