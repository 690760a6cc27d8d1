from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .geometry import GridIndex, ImageDims, ScaleGrid


@dataclass(frozen=True, eq=False)
class Heatmap3D:
    """Plausibility scores laid out (rows h_b, columns w_b, scale channels c)."""

    data: np.ndarray
    dims: ImageDims
    grid: ScaleGrid

    def __post_init__(self):
        expected = (self.dims.height, self.dims.width, self.grid.c)
        if self.data.shape != expected:
            raise ValueError(f"heatmap shape {self.data.shape} does not match {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("heatmap entries must be finite")

    @classmethod
    def from_array(cls, data: np.ndarray, grid: Optional[ScaleGrid] = None) -> "Heatmap3D":
        data = np.asarray(data)
        h, w, c = data.shape
        if grid is None:
            defaults = ScaleGrid().values
            values = defaults[:c] if c <= len(defaults) else [(i + 1) / c for i in range(c)]
            grid = ScaleGrid(values=values)
        return cls(data=data, dims=ImageDims(width=w, height=h), grid=grid)

    @property
    def shape(self):
        return self.data.shape

    def value_at(self, idx: GridIndex) -> float:
        return float(self.data[idx.y, idx.x, idx.z])


class Peak(BaseModel):
    model_config = ConfigDict(frozen=True)

    idx: GridIndex
    score: float = Field(..., ge=0.0, le=1.0)
