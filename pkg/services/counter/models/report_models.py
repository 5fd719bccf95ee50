"""
Evaluation and training report models.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class RegionReport(BaseModel):
    mae: float
    rmse: float


class ImagePrediction(BaseModel):
    """Per-image counts, optionally split into target / non-target regions"""
    sample_id: str
    predicted: float
    ground_truth: float
    target_predicted: Optional[float] = None
    target_ground_truth: Optional[float] = None
    nontarget_predicted: Optional[float] = None
    nontarget_ground_truth: Optional[float] = None


class EvalReport(BaseModel):
    """Aggregate MAE / RMSE over an evaluation set"""
    mae: float = Field(..., ge=0.0)
    rmse: float = Field(..., ge=0.0)
    n: int = Field(..., ge=1, description="Number of evaluated images")
    target: Optional[RegionReport] = None
    nontarget: Optional[RegionReport] = None
    predictions: List[ImagePrediction] = Field(default_factory=list, exclude=True)

    def to_json_dict(self) -> Dict[str, Any]:
        """Flat document {mae, rmse, n, target:{mae,rmse}, nontarget:{mae,rmse}}"""
        return self.model_dump(exclude_none=True)


class EpochMetrics(BaseModel):
    """One line of metrics.jsonl"""
    epoch: int
    lr: float
    loss: float
    count_loss: float
    aux_loss: float
    tbd_loss: float
    train_mae: float
    eval_mae: Optional[float] = None
    eval_rmse: Optional[float] = None


class SuiteRow(BaseModel):
    """One row of an ablation or shots comparison table"""
    variant: str
    seed: str
    mrm: int
    bt: int
    tbd: int
    shots: int
    all_mae: float
    all_rmse: float
    target_mae: float
    target_rmse: float
    nontarget_mae: float
    nontarget_rmse: float
