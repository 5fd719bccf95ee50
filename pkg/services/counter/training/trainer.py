"""
==============================================================================
TRAINING LOOP
==============================================================================
Mini-batch descent on

    L = L_count + lambda1 * L_aux + lambda2 * L_tbd

Determinism: parameters come from default_rng(seed); the sample order of
epoch e is a permutation drawn from default_rng([seed, e]). Two runs with the
same config and data produce bitwise-identical parameters and metric logs.
==============================================================================
"""

import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from config import settings
from errors import DataError, NumericError
from models.config_models import TrainConfig
from models.report_models import EpochMetrics
from models.sample_models import CountingSample
from network import ExemplarCounter, build_model
from objectives.losses import TokenPartition, aux_loss, count_loss, partition_tokens, tbd_loss, total_loss
from objectives.metrics import mae_rmse
from tensor.autograd import Tensor
from training.checkpoint import metrics_path, save_checkpoint
from training.evaluator import evaluate
from training.optimizer import AdamW, clip_grad_norm, learning_rate

PathLike = Union[str, Path]


class TrainResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: ExemplarCounter
    history: List[EpochMetrics]
    out: Optional[Path] = None


class BatchLoss(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total: Tensor
    count: float
    aux: float
    tbd: float
    predicted: List[float]


def flip_sample(sample: CountingSample) -> CountingSample:
    """Mirror query, exemplars, points and density left-right; box sizes are unchanged"""
    width = sample.image_size[1]

    def mirror(points):
        # pixel x covers [x, x+1): mirrored centre is W - x
        return [(min(width - x, np.nextafter(width, 0)), y) for x, y in points]

    return CountingSample(
        sample_id=sample.sample_id,
        query=np.ascontiguousarray(sample.query[:, :, ::-1]),
        exemplars=[np.ascontiguousarray(e[:, :, ::-1]) for e in sample.exemplars],
        boxes=[(width - x0 - w, y0, w, h) for x0, y0, w, h in sample.boxes],
        points=mirror(sample.points),
        density=np.ascontiguousarray(sample.density[:, :, ::-1]),
        nontarget_points=mirror(sample.nontarget_points),
        nontarget_classes=list(sample.nontarget_classes),
        target_class=sample.target_class,
        spec=sample.spec,
    )


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        train_samples: Sequence[CountingSample],
        eval_samples: Optional[Sequence[CountingSample]] = None,
        out: Optional[PathLike] = None,
        model: Optional[ExemplarCounter] = None,
    ):
        if not train_samples:
            raise DataError("training needs at least one sample")
        self.config = config
        self.train_samples = list(train_samples)
        self.eval_samples = list(eval_samples) if eval_samples else []
        self.out = Path(out) if out is not None else None
        self.model = model if model is not None else build_model(config)
        self.optimizer = AdamW(self.model.parameters(), config.optimizer)
        self.weights = config.effective_loss
        self._partitions: Dict[str, TokenPartition] = {}

    def _partition(self, sample: CountingSample, flipped: bool) -> TokenPartition:
        key = f"{sample.sample_id}:{int(flipped)}"
        if key not in self._partitions:
            enc = self.config.encoder
            self._partitions[key] = partition_tokens(sample.points, enc.patch_size, enc.query_grid)
        return self._partitions[key]

    def batch_loss(self, batch: Sequence[CountingSample], flips: Optional[Sequence[bool]] = None) -> BatchLoss:
        flips = list(flips) if flips is not None else [False] * len(batch)
        samples = [flip_sample(s) if f else s for s, f in zip(batch, flips)]
        predictions = [self.model(s) for s in samples]
        targets = [s.density for s in samples]
        n_objects = float(sum(s.count for s in samples))

        count_l = count_loss([p.density for p in predictions], targets, n_objects)
        n_aux = len(predictions[0].intermediates)
        aux_l = aux_loss([[p.intermediates[k] for p in predictions] for k in range(n_aux)], targets, n_objects)

        tbd_l: Union[Tensor, float] = 0.0
        if self.weights.lambda2 > 0 and predictions[0].alignment is not None:
            tbd_l = tbd_loss(
                [p.alignment for p in predictions],
                [self._partition(s, f) for s, f in zip(samples, flips)],
            )
        total = total_loss(count_l, aux_l, tbd_l, self.weights)
        return BatchLoss(
            total=total,
            count=count_l.item(),
            aux=aux_l.item(),
            tbd=tbd_l.item() if isinstance(tbd_l, Tensor) else float(tbd_l),
            predicted=[p.count for p in predictions],
        )

    def train_epoch(self, epoch: int) -> EpochMetrics:
        cfg = self.config
        self.optimizer.lr = learning_rate(cfg.optimizer.lr, epoch, cfg.schedule)
        epoch_rng = np.random.default_rng([cfg.seed, epoch])
        order = epoch_rng.permutation(len(self.train_samples))
        flips = epoch_rng.random(len(order)) < 0.5 if cfg.augment_flip else np.zeros(len(order), dtype=bool)

        sums = {"loss": 0.0, "count": 0.0, "aux": 0.0, "tbd": 0.0}
        predicted, ground_truth = [], []
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [self.train_samples[i] for i in idx]
            result = self.batch_loss(batch, [bool(flips[i]) for i in range(start, start + len(idx))])
            loss_value = result.total.item()
            if not math.isfinite(loss_value):
                message = (
                    f"Non-finite loss at epoch {epoch}, batch {n_batches}: total={loss_value}, "
                    f"count={result.count}, aux={result.aux}, tbd={result.tbd}"
                )
                logger.error(message)
                raise NumericError(message)
            self.optimizer.zero_grad()
            result.total.backward()
            grad_norm = clip_grad_norm(self.optimizer.params, cfg.optimizer.grad_clip)
            if not math.isfinite(grad_norm):
                message = f"Non-finite gradient norm at epoch {epoch}, batch {n_batches}: {grad_norm} (loss={loss_value})"
                logger.error(message)
                raise NumericError(message)
            self.optimizer.step()
            logger.debug(f"epoch {epoch} batch {n_batches}: loss={loss_value:.6f} grad_norm={grad_norm:.4f}")

            sums["loss"] += loss_value
            sums["count"] += result.count
            sums["aux"] += result.aux
            sums["tbd"] += result.tbd
            predicted.extend(result.predicted)
            ground_truth.extend(s.count for s in batch)
            n_batches += 1

        train_mae, _ = mae_rmse(predicted, ground_truth)
        metrics = EpochMetrics(
            epoch=epoch,
            lr=self.optimizer.lr,
            loss=sums["loss"] / n_batches,
            count_loss=sums["count"] / n_batches,
            aux_loss=sums["aux"] / n_batches,
            tbd_loss=sums["tbd"] / n_batches,
            train_mae=train_mae,
        )
        if self.eval_samples and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            report = evaluate(self.model, self.eval_samples)
            metrics.eval_mae, metrics.eval_rmse = report.mae, report.rmse
        return metrics

    def train(self) -> TrainResult:
        cfg = self.config
        log_every = int(settings.get("training.log_every", 1)) or 1
        history: List[EpochMetrics] = []
        metrics_file = None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            metrics_file = open(metrics_path(self.out), "w", encoding="utf-8")
        logger.info(
            f"Training {len(self.model.parameters())} tensors on {len(self.train_samples)} samples "
            f"for {cfg.epochs} epochs ({cfg.ablation.label}, shots={cfg.encoder.shots})"
        )
        try:
            for epoch in range(cfg.epochs):
                metrics = self.train_epoch(epoch)
                history.append(metrics)
                if metrics_file is not None:
                    metrics_file.write(json.dumps(metrics.model_dump(), sort_keys=True) + "\n")
                    metrics_file.flush()
                if (epoch + 1) % log_every == 0 or epoch == cfg.epochs - 1:
                    extra = f" eval_mae={metrics.eval_mae:.4f}" if metrics.eval_mae is not None else ""
                    logger.info(
                        f"epoch {epoch + 1}/{cfg.epochs} lr={metrics.lr:.2e} loss={metrics.loss:.6f} "
                        f"count={metrics.count_loss:.6f} train_mae={metrics.train_mae:.4f}{extra}"
                    )
        finally:
            if metrics_file is not None:
                metrics_file.close()
        if self.out is not None:
            save_checkpoint(self.model, self.out)
        return TrainResult(model=self.model, history=history, out=self.out)


def train(
    config: TrainConfig,
    train_samples: Sequence[CountingSample],
    eval_samples: Optional[Sequence[CountingSample]] = None,
    out: Optional[PathLike] = None,
) -> TrainResult:
    return Trainer(config, train_samples, eval_samples, out).train()
