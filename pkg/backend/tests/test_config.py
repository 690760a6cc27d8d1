import json

import pytest
from pydantic import ValidationError

from backend.placement.config import LossConfig, ModelConfig, RunConfig, Settings
from backend.placement.models.scene import OracleParams


def test_defaults_are_consistent():
    cfg = RunConfig()
    assert cfg.model.c == cfg.grid.c == 16
    assert cfg.model.grid_size == 8 and cfg.model.n_tokens == 64
    assert cfg.train.loss.kind == "sparse_contrastive"
    assert cfg.train.variant == "full"


def test_overrides_parse_json_values():
    cfg = RunConfig().with_overrides(["train.batch_size=8", "train.loss.kind=binary", "model.variant=global_only"])
    assert cfg.train.batch_size == 8
    assert cfg.train.loss.kind == "binary"
    assert cfg.model.variant == "global_only"


@pytest.mark.parametrize("override", ["train.nope=1", "nope.batch_size=1", "train.batch_size"])
def test_bad_overrides(override):
    with pytest.raises(ValueError):
        RunConfig().with_overrides([override])


def test_overrides_are_validated_together():
    with pytest.raises(ValidationError):
        RunConfig().with_overrides(["model.c=4"])
    cfg = RunConfig().with_overrides(["model.c=4", "grid.values=[0.2,0.4,0.6,0.8]"])
    assert cfg.grid.c == 4


@pytest.mark.parametrize(
    "changes",
    [{"input_size": 60}, {"d_t": 30, "n_heads": 3}, {"d_t": 12, "n_heads": 4, "k": 4}, {"k": 0}],
)
def test_model_config_rejects_bad_shapes(changes):
    with pytest.raises(ValidationError):
        ModelConfig(**changes)


def test_loss_and_oracle_validation():
    with pytest.raises(ValidationError):
        LossConfig(kind="focal")
    with pytest.raises(ValidationError):
        LossConfig(margin=-0.1)
    with pytest.raises(ValidationError):
        OracleParams(s_min=0.5, s_max=0.4)
    with pytest.raises(ValidationError):
        OracleParams(flyer_band=(0.4, 0.2))


def test_config_hash_ignores_paths():
    a = RunConfig()
    b = RunConfig.model_validate({"paths": {"dataset": "/data/train"}})
    c = RunConfig().with_overrides(["train.seed=1"])
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_load_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"total_steps": 10}, "paths": {"dataset": "d"}}))
    cfg = RunConfig.load(str(path))
    assert cfg.train.total_steps == 10 and cfg.paths.dataset == "d"
    assert RunConfig.load(None) == RunConfig()
    with pytest.raises(FileNotFoundError):
        RunConfig.load(str(tmp_path / "missing.json"))


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("PLACEMENT_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("PLACEMENT_TORCH_THREADS", "2")
    s = Settings()
    assert s.log_level == "DEBUG"
    assert s.torch_threads == 2
