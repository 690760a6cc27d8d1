import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .models.geometry import ScaleGrid
from .models.scene import OracleParams


class Settings(BaseSettings):
    """Process settings loaded from environment variables (prefix PLACEMENT_)."""

    app_name: str = "TopNet Placement"
    app_version: str = "1.0.0"
    log_level: str = "INFO"
    log_json: bool = True

    # Torch runtime
    torch_threads: int = 4
    deterministic: bool = True

    default_output_dir: str = "./runs"

    model_config = SettingsConfigDict(env_prefix="PLACEMENT_", env_file=".env", case_sensitive=False)


Variant = Literal["full", "local_concat", "global_only"]


class ModelConfig(BaseModel):
    """Hyperparameters of the forward graph."""

    model_config = ConfigDict(frozen=True)

    input_size: int = Field(64, ge=8)
    k: int = Field(3, ge=1)
    d_enc: int = Field(64, ge=1)
    d_t: int = Field(128, ge=4)
    n_layers: int = Field(2, ge=1)
    n_heads: int = Field(4, ge=1)
    c: int = Field(16, ge=1)
    ff_mult: int = Field(2, ge=1)
    variant: Variant = "full"
    attn_scale_mode: Literal["inv_sqrt_d", "inv_d"] = "inv_sqrt_d"

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.input_size % (2 ** self.k):
            raise ValueError("input_size must be divisible by 2**k")
        if self.d_t % self.n_heads:
            raise ValueError("d_t must be divisible by n_heads")
        if self.d_t % 4:
            raise ValueError("d_t must be divisible by 4 for the 2D positional embedding")
        if self.d_t < 2 ** self.k:
            raise ValueError("d_t must be at least 2**k so every decoder stage keeps a channel")
        return self

    @property
    def grid_size(self) -> int:
        return self.input_size // (2 ** self.k)

    @property
    def n_tokens(self) -> int:
        return self.grid_size * self.grid_size


class LossConfig(BaseModel):
    """Objective selection and hyperparameters (the `loss` key of a run config)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sparse_contrastive", "binary", "gaussian", "regression"] = "sparse_contrastive"
    reduction: Literal["mean", "sum"] = "mean"
    margin: float = Field(0.1, ge=0.0)
    # None derives the radius from resolution: round(20 * h_b / 224)
    radius_x: Optional[int] = Field(None, ge=0)
    radius_y: Optional[int] = Field(None, ge=0)
    radius_z: int = Field(2, ge=0)
    sigma_xy: Optional[float] = Field(None, gt=0.0)
    sigma_z: float = Field(2.0, gt=0.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(16, ge=1)
    base_lr: float = Field(3e-4, gt=0.0)
    weight_decay: float = Field(0.03, ge=0.0)
    total_steps: int = Field(2000, ge=1)
    eval_every: int = Field(200, ge=1)
    seed: int = 0
    loss: LossConfig = Field(default_factory=LossConfig)
    variant: Variant = "full"


class PathsConfig(BaseModel):
    dataset: Optional[str] = None
    eval_dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    output: Optional[str] = None


class RunConfig(BaseModel):
    """Everything a command needs: paths, network, training, oracle and scale grid."""

    paths: PathsConfig = Field(default_factory=PathsConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    oracle: OracleParams = Field(default_factory=OracleParams)
    grid: ScaleGrid = Field(default_factory=ScaleGrid)

    @model_validator(mode="after")
    def _grid_matches_channels(self) -> "RunConfig":
        if self.grid.c != self.model.c:
            raise ValueError(f"scale grid has {self.grid.c} values but model.c is {self.model.c}")
        return self

    @classmethod
    def load(cls, path: Optional[str] = None) -> "RunConfig":
        if path is None:
            return cls()
        return cls.model_validate_json(Path(path).read_text())

    def with_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        """Apply `dotted.key=value` overrides; values are parsed as JSON when possible."""
        data = self.model_dump()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"override '{item}' is not of the form key=value")
            _set_dotted(data, key.strip(), _parse_value(raw))
        return type(self).model_validate(data)

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json", exclude={"paths"}), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ValueError(f"unknown config key '{key}'")
        node = node[part]
    if parts[-1] not in node:
        raise ValueError(f"unknown config key '{key}'")
    node[parts[-1]] = value


# Global settings instance
settings = Settings()
