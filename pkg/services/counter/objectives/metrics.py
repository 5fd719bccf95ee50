"""
Counting metrics: MAE / RMSE over a set of images and the target / non-target
region split.

The target region is the union of boxes, one per GT point, each as large as
the largest exemplar box and centred on the point. The non-target region is
its complement. Region counts compare the predicted mass inside a region with
the GT density mass inside the same region.
"""

import math
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from errors import DataError
from models.report_models import EvalReport, ImagePrediction, RegionReport
from tensor.autograd import ShapeError, Tensor


class RegionCounts(BaseModel):
    target_predicted: float
    target_ground_truth: float
    nontarget_predicted: float
    nontarget_ground_truth: float


def mae_rmse(pred_counts: Sequence[float], gt_counts: Sequence[float]) -> Tuple[float, float]:
    if len(pred_counts) != len(gt_counts):
        raise ShapeError(f"{len(pred_counts)} predictions for {len(gt_counts)} ground-truth counts")
    if not pred_counts:
        raise DataError("cannot compute MAE / RMSE over an empty set")
    errors = np.asarray(pred_counts, dtype=np.float64) - np.asarray(gt_counts, dtype=np.float64)
    return float(np.abs(errors).mean()), float(math.sqrt((errors ** 2).mean()))


def region_masks(
    points: Sequence[Tuple[float, float]],
    exemplar_boxes: Sequence[Tuple[float, float]],
    image_size: Tuple[int, int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Binary (target, non-target) pixel masks; exemplar_boxes are (w, h) sizes"""
    height, width = image_size
    target = np.zeros((height, width), dtype=bool)
    if points:
        if not exemplar_boxes:
            raise DataError("region masks need exemplar box sizes to expand points")
        box_w = int(round(max(w for w, _ in exemplar_boxes)))
        box_h = int(round(max(h for _, h in exemplar_boxes)))
        for x, y in points:
            x0 = int(math.floor(x - box_w / 2.0 + 0.5))
            y0 = int(math.floor(y - box_h / 2.0 + 0.5))
            target[max(y0, 0):min(y0 + box_h, height), max(x0, 0):min(x0 + box_w, width)] = True
    return target, ~target


def _plane(y: Union[Tensor, np.ndarray]) -> np.ndarray:
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    return data.reshape(data.shape[-2:]) if data.ndim == 3 else data


def region_eval(
    pred: Union[Tensor, np.ndarray], gt: Union[Tensor, np.ndarray], masks: Tuple[np.ndarray, np.ndarray]
) -> RegionCounts:
    pred_plane, gt_plane = _plane(pred), _plane(gt)
    target, nontarget = masks
    if pred_plane.shape != gt_plane.shape or pred_plane.shape != target.shape:
        raise ShapeError(f"region eval shapes disagree: pred {pred_plane.shape}, gt {gt_plane.shape}, mask {target.shape}")
    return RegionCounts(
        target_predicted=float(pred_plane[target].sum()),
        target_ground_truth=float(gt_plane[target].sum()),
        nontarget_predicted=float(pred_plane[nontarget].sum()),
        nontarget_ground_truth=float(gt_plane[nontarget].sum()),
    )


def build_report(predictions: List[ImagePrediction]) -> EvalReport:
    """Aggregate per-image counts; region sub-reports appear when every image carries them"""
    if not predictions:
        raise DataError("cannot build a report from zero predictions")
    mae, rmse = mae_rmse([p.predicted for p in predictions], [p.ground_truth for p in predictions])
    target: Optional[RegionReport] = None
    nontarget: Optional[RegionReport] = None
    if all(p.target_predicted is not None for p in predictions):
        t_mae, t_rmse = mae_rmse(
            [p.target_predicted for p in predictions], [p.target_ground_truth for p in predictions]
        )
        n_mae, n_rmse = mae_rmse(
            [p.nontarget_predicted for p in predictions], [p.nontarget_ground_truth for p in predictions]
        )
        target = RegionReport(mae=t_mae, rmse=t_rmse)
        nontarget = RegionReport(mae=n_mae, rmse=n_rmse)
    return EvalReport(mae=mae, rmse=rmse, n=len(predictions), target=target, nontarget=nontarget, predictions=predictions)
