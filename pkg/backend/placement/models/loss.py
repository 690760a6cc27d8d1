from pydantic import BaseModel, ConfigDict, Field


class MarginSpec(BaseModel):
    """Ground-truth neighborhood radii and the margin required outside it."""

    model_config = ConfigDict(frozen=True)

    radius_x: int = Field(..., ge=0)
    radius_y: int = Field(..., ge=0)
    radius_z: int = Field(..., ge=0)
    margin: float = Field(0.1, ge=0.0)
