from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .geometry import GridIndex, ImageDims, PlacementBox


class OracleParams(BaseModel):
    """Parameters of the analytic plausibility rule of the synthetic world."""

    model_config = ConfigDict(frozen=True)

    horizon_frac_min: float = Field(0.30, ge=0.0, le=1.0)
    horizon_frac_max: float = Field(0.50, ge=0.0, le=1.0)
    s_min: float = 0.15
    s_max: float = 0.60
    tau_s: float = Field(0.05, gt=0.0)
    flyer_band: Tuple[float, float] = (0.15, 0.35)
    max_obstacle_iou: float = Field(0.05, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "OracleParams":
        if not 0.0 < self.s_min < self.s_max <= 0.9:
            raise ValueError("require 0 < s_min < s_max <= 0.9")
        if self.horizon_frac_min > self.horizon_frac_max:
            raise ValueError("horizon_frac_min must not exceed horizon_frac_max")
        lo, hi = self.flyer_band
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("flyer_band must be an interval inside (0, 1]")
        return self


class ObjectSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    category: Literal["grounded", "flyer"]
    aspect: float = Field(..., ge=0.5, le=2.0)
    color: Tuple[int, int, int]
    shape: Literal["ellipse", "rectangle"]


class GroundTruth(BaseModel):
    """The single supervised placement: its lattice point and continuous box."""

    model_config = ConfigDict(frozen=True)

    idx: GridIndex
    box: PlacementBox


class SceneMeta(BaseModel):
    """Everything about a scene except its pixels (stored as meta_%06d.json)."""

    spec: ObjectSpec
    oracle: OracleParams
    horizon_frac: float
    horizon_row: int
    obstacles: List[PlacementBox] = Field(default_factory=list)
    gt: GroundTruth
    seed: int
    layout: Literal["standard", "bimodal"] = "standard"


@dataclass(frozen=True, eq=False)
class Scene:
    """One synthetic sample: background, object raster on white, and its metadata.

    `gt` is None only while a scene is being assembled and its placement sampled.
    """

    bg: np.ndarray
    obj: np.ndarray
    spec: ObjectSpec
    oracle: OracleParams
    horizon_frac: float
    horizon_row: int
    gt: Optional[GroundTruth]
    seed: int
    obstacles: List[PlacementBox] = field(default_factory=list)
    layout: str = "standard"

    @property
    def dims(self) -> ImageDims:
        return ImageDims(width=int(self.bg.shape[1]), height=int(self.bg.shape[0]))

    @property
    def aspect(self) -> float:
        return self.spec.aspect

    def meta(self) -> SceneMeta:
        return SceneMeta(
            spec=self.spec,
            oracle=self.oracle,
            horizon_frac=self.horizon_frac,
            horizon_row=self.horizon_row,
            obstacles=list(self.obstacles),
            gt=self.gt,
            seed=self.seed,
            layout=self.layout,
        )

    @classmethod
    def from_meta(cls, meta: SceneMeta, bg: np.ndarray, obj: np.ndarray) -> "Scene":
        return cls(
            bg=bg,
            obj=obj,
            spec=meta.spec,
            oracle=meta.oracle,
            horizon_frac=meta.horizon_frac,
            horizon_row=meta.horizon_row,
            gt=meta.gt,
            seed=meta.seed,
            obstacles=list(meta.obstacles),
            layout=meta.layout,
        )

    def with_changes(self, **changes) -> "Scene":
        return replace(self, **changes)
