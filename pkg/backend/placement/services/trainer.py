"""Optimization loop, checkpoints and model evaluation.

Training uses AdamW (decoupled weight decay) with a cosine learning-rate
schedule set by hand before every step. Batches are drawn with replacement by a
numpy generator whose state is checkpointed with the parameters and moments, so
a resumed run continues the uninterrupted trajectory exactly.
"""

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import structlog
import torch
import torch.nn.functional as F
from torch import nn

from ..config import ModelConfig, RunConfig, Settings, settings
from ..errors import CorruptCheckpoint, NonFiniteLoss
from ..models.heatmap import Heatmap3D
from ..models.report import EvalReport
from ..models.scene import Scene
from .diffcore import load_tensors, pack_tensors, unpack_tensors
from .evalsuite import box_report, heatmap_report
from .geometry import scale_of_box
from .loss import heatmap_objective, margin_matrix, margin_spec_for
from .topnet import (
    PlacementRegressor,
    build_model,
    normalize_images,
    prepare_background,
    prepare_object,
    regression_box,
)

logger = structlog.get_logger(__name__)

CHECKPOINT_FORMAT = 1
BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def configure_torch(cfg: Optional[Settings] = None) -> None:
    cfg = cfg or settings
    torch.set_num_threads(cfg.torch_threads)
    torch.use_deterministic_algorithms(cfg.deterministic)


def effective_model_config(cfg: RunConfig) -> ModelConfig:
    """The network config with the training variant applied."""
    return cfg.model.model_copy(update={"variant": cfg.train.variant})


def is_regression(cfg: RunConfig) -> bool:
    return cfg.train.loss.kind == "regression"


def build_optimizer(model: nn.Module, cfg: RunConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(),
        lr=cfg.train.base_lr,
        betas=BETAS,
        eps=ADAM_EPS,
        weight_decay=cfg.train.weight_decay,
    )


class SceneTensors:
    """Scenes with their network inputs prepared once and kept as uint8."""

    def __init__(self, scenes: Sequence[Scene], cfg: ModelConfig):
        self.scenes = list(scenes)
        self.bg = torch.stack([torch.from_numpy(prepare_background(s.bg, cfg).copy()) for s in self.scenes])
        self.obj = torch.stack([torch.from_numpy(prepare_object(s.obj, cfg).copy()) for s in self.scenes])

    def __len__(self) -> int:
        return len(self.scenes)

    def batch(self, indices: Sequence[int], dtype: torch.dtype = torch.float32):
        index = torch.as_tensor(list(indices), dtype=torch.long)
        return normalize_images(self.bg[index], dtype), normalize_images(self.obj[index], dtype)


def batch_loss(model: nn.Module, data: SceneTensors, indices: Sequence[int], cfg: RunConfig) -> torch.Tensor:
    """Mean per-sample loss of one batch under the configured objective."""
    dtype = next(model.parameters()).dtype
    bg, obj = data.batch(indices, dtype)
    scenes = [data.scenes[i] for i in indices]
    out = model(bg, obj)
    loss_cfg = cfg.train.loss

    if isinstance(model, PlacementRegressor):
        dims = scenes[0].dims
        target = torch.tensor(
            [[s.gt.box.center[0] / dims.width, s.gt.box.center[1] / dims.height, scale_of_box(s.gt.box, dims)] for s in scenes],
            dtype=out.dtype,
        )
        return F.mse_loss(out[:, :3], target)

    losses = []
    for H, scene in zip(out, scenes):
        margins = None
        if loss_cfg.kind == "sparse_contrastive":
            margins = margin_matrix(scene.gt, scene.dims, H.shape[2], margin_spec_for(scene.dims, loss_cfg))
        losses.append(heatmap_objective(H, scene.gt, scene.dims, loss_cfg, margins))
    return torch.stack(losses).mean()


def train_step(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    data: SceneTensors,
    indices: Sequence[int],
    cfg: RunConfig,
    lr: float,
    step: int = 0,
) -> float:
    model.train()
    for group in optimizer.param_groups:
        group["lr"] = lr
    loss = batch_loss(model, data, indices, cfg)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            "loss is not finite",
            detail={"step": step, "loss": float(loss), "indices": [int(i) for i in indices]},
        )
    optimizer.zero_grad(set_to_none=False)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


# -- checkpoints ------------------------------------------------------------------

@dataclass
class Checkpoint:
    step: int
    config: RunConfig
    params: Dict[str, np.ndarray]
    moments: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_steps: int = 0
    sampler_state: Optional[Dict[str, Any]] = None


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _moment_tensors(model: nn.Module, optimizer: torch.optim.Optimizer):
    named = []
    for name, param in model.named_parameters():
        state = optimizer.state.get(param, {})
        if "exp_avg" in state:
            named.append((f"{name}.exp_avg", state["exp_avg"]))
            named.append((f"{name}.exp_avg_sq", state["exp_avg_sq"]))
    return named


def _optimizer_steps(optimizer: torch.optim.Optimizer) -> int:
    for state in optimizer.state.values():
        if "step" in state:
            return int(float(state["step"]))
    return 0


def save_checkpoint(
    directory,
    model: nn.Module,
    optimizer: Optional[torch.optim.Optimizer],
    step: int,
    cfg: RunConfig,
    sampler_state: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write manifest.json, params.bin and moments.bin; identical state gives identical bytes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    param_manifest, param_blob = pack_tensors(model.named_parameters())
    moments = _moment_tensors(model, optimizer) if optimizer is not None else []
    moment_manifest, moment_blob = pack_tensors(moments)

    (directory / "params.bin").write_bytes(param_blob)
    (directory / "moments.bin").write_bytes(moment_blob)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "step": step,
        "config": cfg.model_dump(mode="json", exclude={"paths"}),
        "config_hash": cfg.config_hash(),
        "params": param_manifest,
        "moments": moment_manifest,
        "optimizer_steps": _optimizer_steps(optimizer) if optimizer is not None else 0,
        "sampler_state": sampler_state,
        "sha256": {"params.bin": _sha256(param_blob), "moments.bin": _sha256(moment_blob)},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info("checkpoint.saved", path=str(directory), step=step)
    return directory


def load_checkpoint(directory, expected: Optional[RunConfig] = None) -> Checkpoint:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise CorruptCheckpoint("manifest.json is missing", detail={"path": str(directory)})
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptCheckpoint("manifest.json is not valid JSON", detail={"error": str(e)})
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint("unsupported checkpoint format", detail={"format": manifest.get("format")})

    blobs = {}
    for name, digest in manifest["sha256"].items():
        path = directory / name
        data = path.read_bytes() if path.exists() else b""
        if _sha256(data) != digest:
            raise CorruptCheckpoint(f"{name} does not match its recorded hash", detail={"file": name})
        blobs[name] = data

    config = RunConfig.model_validate(manifest["config"])
    if config.config_hash() != manifest["config_hash"]:
        raise CorruptCheckpoint("stored config does not match its hash")
    if expected is not None and expected.config_hash() != manifest["config_hash"]:
        raise CorruptCheckpoint(
            "checkpoint was written with a different config",
            detail={"expected": expected.config_hash(), "found": manifest["config_hash"]},
        )
    try:
        params = unpack_tensors(manifest["params"], blobs["params.bin"])
        moments = unpack_tensors(manifest["moments"], blobs["moments.bin"])
    except ValueError as e:
        raise CorruptCheckpoint(str(e))
    return Checkpoint(
        step=int(manifest["step"]),
        config=config,
        params=params,
        moments=moments,
        optimizer_steps=int(manifest["optimizer_steps"]),
        sampler_state=manifest.get("sampler_state"),
    )


def restore_model(ckpt: Checkpoint) -> nn.Module:
    model = build_model(effective_model_config(ckpt.config), regression=is_regression(ckpt.config))
    try:
        load_tensors(model, ckpt.params)
    except (KeyError, RuntimeError) as e:
        raise CorruptCheckpoint("parameters do not fit the configured model", detail={"error": str(e)})
    return model


def restore_optimizer(optimizer: torch.optim.Optimizer, model: nn.Module, ckpt: Checkpoint) -> None:
    if not ckpt.optimizer_steps:
        return
    index = {id(p): i for i, p in enumerate(optimizer.param_groups[0]["params"])}
    state = {}
    for name, param in model.named_parameters():
        state[index[id(param)]] = {
            "step": torch.tensor(float(ckpt.optimizer_steps)),
            "exp_avg": torch.from_numpy(ckpt.moments[f"{name}.exp_avg"]),
            "exp_avg_sq": torch.from_numpy(ckpt.moments[f"{name}.exp_avg_sq"]),
        }
    optimizer.load_state_dict({"state": state, "param_groups": optimizer.state_dict()["param_groups"]})


# -- evaluation -------------------------------------------------------------------

def predict_all(model: nn.Module, data: SceneTensors, grid) -> tuple:
    """One forward per scene; returns the heatmaps (or boxes) and mean forward time in ms."""
    dtype = next(model.parameters()).dtype
    outputs, elapsed = [], 0.0
    with torch.no_grad():
        for i, scene in enumerate(data.scenes):
            bg, obj = data.batch([i], dtype)
            start = time.perf_counter()
            out = model(bg, obj)[0]
            elapsed += time.perf_counter() - start
            if isinstance(model, PlacementRegressor):
                outputs.append(regression_box(out.tolist(), scene.aspect, scene.dims))
            else:
                outputs.append(Heatmap3D(data=out.numpy().astype(np.float64), dims=scene.dims, grid=grid))
    mean_ms = 1000.0 * elapsed / len(data) if len(data) else 0.0
    return outputs, mean_ms


def evaluate_model(model: nn.Module, scenes, cfg: RunConfig) -> EvalReport:
    """Run every evaluation protocol; parameters are not modified."""
    data = scenes if isinstance(scenes, SceneTensors) else SceneTensors(scenes, model.cfg)
    was_training = model.training
    model.eval()
    try:
        outputs, mean_ms = predict_all(model, data, cfg.grid)
    finally:
        model.train(was_training)
    if isinstance(model, PlacementRegressor):
        report = box_report(outputs, data.scenes, cfg.grid, mean_forward_ms=mean_ms)
    else:
        report = heatmap_report(outputs, data.scenes, cfg.grid, mean_forward_ms=mean_ms)
    logger.info("eval.completed", n=report.n_samples, iou_gt_05=report.frac_iou_gt_05, oracle_top1=report.oracle_top1_hit)
    return report


# -- training loop ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: nn.Module
    step: int
    losses: List[float]
    progress: List[Dict[str, Any]]


def _append_progress(directory: Optional[Path], record: Dict[str, Any]) -> None:
    if directory is None:
        return
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "progress.jsonl", "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(
    cfg: RunConfig,
    scenes: Sequence[Scene],
    eval_scenes: Optional[Sequence[Scene]] = None,
    checkpoint_dir=None,
    resume: bool = False,
    stop_at: Optional[int] = None,
) -> TrainResult:
    """Train from scratch (or from the checkpoint in `checkpoint_dir` when resuming).

    `stop_at` ends the run early without changing the schedule, which is
    always computed against `cfg.train.total_steps`.
    """
    tcfg = cfg.train
    model_cfg = effective_model_config(cfg)
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    data = SceneTensors(scenes, model_cfg)
    eval_data = SceneTensors(eval_scenes, model_cfg) if eval_scenes else None

    rng = np.random.default_rng(tcfg.seed)
    if resume and checkpoint_dir is not None and (checkpoint_dir / "manifest.json").exists():
        ckpt = load_checkpoint(checkpoint_dir, expected=cfg)
        model = restore_model(ckpt)
        optimizer = build_optimizer(model, cfg)
        restore_optimizer(optimizer, model, ckpt)
        if ckpt.sampler_state is not None:
            rng.bit_generator.state = ckpt.sampler_state
        start = ckpt.step
        logger.info("train.resumed", step=start)
    else:
        model = build_model(model_cfg, seed=tcfg.seed, regression=is_regression(cfg))
        optimizer = build_optimizer(model, cfg)
        start = 0

    end = tcfg.total_steps if stop_at is None else min(stop_at, tcfg.total_steps)
    losses: List[float] = []
    progress: List[Dict[str, Any]] = []
    logger.info("train.started", start=start, end=end, n_scenes=len(data), loss=tcfg.loss.kind, variant=tcfg.variant)

    for step in range(start, end):
        lr = cosine_lr(step, tcfg.total_steps, tcfg.base_lr)
        indices = rng.integers(0, len(data), size=tcfg.batch_size).tolist()
        loss = train_step(model, optimizer, data, indices, cfg, lr, step)
        losses.append(loss)

        done = step + 1
        if done % tcfg.eval_every == 0 or done == end:
            record: Dict[str, Any] = {"step": done, "lr": lr, "loss": loss}
            if eval_data is not None:
                record["metrics"] = evaluate_model(model, eval_data, cfg).model_dump()
            logger.info("train.progress", **record)
            _append_progress(checkpoint_dir, record)
            progress.append(record)
            if checkpoint_dir is not None:
                save_checkpoint(checkpoint_dir, model, optimizer, done, cfg, rng.bit_generator.state)

    return TrainResult(model=model, step=max(end, start), losses=losses, progress=progress)
