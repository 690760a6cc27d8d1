import math
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class ImageDims(BaseModel):
    """Background image size in pixels."""

    model_config = ConfigDict(frozen=True)

    width: int = Field(..., ge=8)
    height: int = Field(..., ge=8)

    @classmethod
    def square(cls, size: int) -> "ImageDims":
        return cls(width=size, height=size)

    @property
    def area(self) -> int:
        return self.width * self.height


class PlacementBox(BaseModel):
    """A candidate placement [left, top, width, height] in background pixels.

    Boxes are never clipped on construction; they may extend past the image.
    """

    model_config = ConfigDict(frozen=True)

    left: float
    top: float
    width: float = Field(..., gt=0)
    height: float = Field(..., gt=0)

    @field_validator("left", "top", "width", "height")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("box coordinates must be finite")
        return value

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def center(self) -> Tuple[float, float]:
        return self.left + self.width / 2.0, self.top + self.height / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> List[float]:
        return [self.left, self.top, self.width, self.height]


def _default_scale_values() -> List[float]:
    return [round(0.15 + 0.05 * i, 2) for i in range(16)]


class ScaleGrid(BaseModel):
    """The c discrete scales, one per heatmap channel (0.15 .. 0.90 by default)."""

    model_config = ConfigDict(frozen=True)

    values: List[float] = Field(default_factory=_default_scale_values)

    @field_validator("values")
    @classmethod
    def _strictly_increasing(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("scale grid must not be empty")
        if any(v <= 0.0 or v > 1.0 for v in values):
            raise ValueError("scales must lie in (0, 1]")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("scales must be strictly increasing")
        return values

    @property
    def c(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, z: int) -> float:
        return self.values[z]


class GridIndex(BaseModel):
    """A lattice point of the heatmap: column x, row y, scale channel z."""

    model_config = ConfigDict(frozen=True)

    x: int = Field(..., ge=0)
    y: int = Field(..., ge=0)
    z: int = Field(..., ge=0)

    def as_tuple(self) -> Tuple[int, int, int]:
        return self.x, self.y, self.z
