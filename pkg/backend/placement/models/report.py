from typing import Dict

from pydantic import BaseModel, Field


class EvalReport(BaseModel):
    """Aggregate evaluation of a model over a scene set.

    Columns follow the top-k IOU, location-given-scale (NS) and
    scale-given-location tables; oracle hits are synthetic-world extensions.
    """

    n_samples: int = Field(..., ge=0)
    frac_iou_gt_05: float = Field(..., ge=0.0, le=1.0)
    mean_iou: float = Field(..., ge=0.0, le=1.0)
    top1_frac_iou_gt_05: float = Field(0.0, ge=0.0, le=1.0)
    top1_mean_iou: float = Field(0.0, ge=0.0, le=1.0)
    ns_mean: float = Field(0.0, ge=0.0, le=1.0)
    ns_frac: Dict[str, float] = Field(default_factory=dict)
    ns3d_mean: float = Field(0.0, ge=0.0, le=1.0)
    n_degenerate: int = Field(0, ge=0)
    scale_iou_frac: Dict[str, float] = Field(default_factory=dict)
    scale_mean_err: float = Field(0.0, ge=0.0)
    top1_scale_mean_err: float = Field(0.0, ge=0.0)
    oracle_top1_hit: float = Field(0.0, ge=0.0, le=1.0)
    oracle_top5_hit: float = Field(0.0, ge=0.0, le=1.0)
    chance_level: float = Field(0.0, ge=0.0, le=1.0)
    mean_forward_ms: float = Field(0.0, ge=0.0)
