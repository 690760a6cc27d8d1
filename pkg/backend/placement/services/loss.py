"""Training objectives over a (h_b, w_b, c) score tensor.

The sparse contrastive loss asks the ground-truth cell to beat every cell
outside its neighborhood by a margin, and the range loss pins the ground truth
to 1 and the minimum to 0. Binary and Gaussian assignment are the single-peak
baselines. All functions are differentiable through torch autograd.
"""

import math
from typing import Literal, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F

from ..config import LossConfig
from ..errors import ShapeMismatch
from ..models.geometry import ImageDims
from ..models.loss import MarginSpec
from ..models.scene import GroundTruth

ArrayLike = Union[np.ndarray, torch.Tensor]


def scaled_radius(height: int, base: int = 20, base_size: int = 224) -> int:
    """Neighborhood radius scaled from the 224-pixel reference resolution."""
    return int(math.floor(base * height / base_size + 0.5))


def margin_spec_for(dims: ImageDims, cfg: LossConfig) -> MarginSpec:
    radius = scaled_radius(dims.height)
    return MarginSpec(
        radius_x=cfg.radius_x if cfg.radius_x is not None else radius,
        radius_y=cfg.radius_y if cfg.radius_y is not None else radius,
        radius_z=cfg.radius_z,
        margin=cfg.margin,
    )


def margin_matrix(gt: GroundTruth, dims: ImageDims, c: int, spec: MarginSpec) -> np.ndarray:
    """0 inside the ground-truth box neighborhood, `spec.margin` elsewhere; shape (h, w, c)."""
    ys = np.abs(np.arange(dims.height) - gt.idx.y) <= spec.radius_y
    xs = np.abs(np.arange(dims.width) - gt.idx.x) <= spec.radius_x
    zs = np.abs(np.arange(c) - gt.idx.z) <= spec.radius_z
    inside = ys[:, None, None] & xs[None, :, None] & zs[None, None, :]
    return np.where(inside, 0.0, spec.margin)


def _gt_value(H: torch.Tensor, gt: GroundTruth) -> torch.Tensor:
    return H[gt.idx.y, gt.idx.x, gt.idx.z]


def _as_like(M: ArrayLike, H: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(M, dtype=H.dtype, device=H.device)


def sparse_contrastive(
    H: torch.Tensor,
    M: ArrayLike,
    gt: GroundTruth,
    reduction: Literal["mean", "sum"] = "mean",
) -> torch.Tensor:
    """Hinge |H(x,y,z) - H(gt) + M(x,y,z)|^+ reduced over all cells."""
    if tuple(H.shape) != tuple(M.shape):
        raise ShapeMismatch(
            "heatmap and margin matrix shapes differ",
            detail={"heatmap": list(H.shape), "margin": list(M.shape)},
        )
    # relu has a zero subgradient at the kink
    hinge = F.relu(H - _gt_value(H, gt) + _as_like(M, H))
    return hinge.sum() if reduction == "sum" else hinge.mean()


def range_loss(H: torch.Tensor, gt: GroundTruth) -> torch.Tensor:
    """|1 - H(gt)| + |min(H)|; the min's gradient goes to the first minimizer in scan order."""
    flat = H.reshape(-1)
    lowest = flat[torch.argmin(flat)]
    return torch.abs(1.0 - _gt_value(H, gt)) + torch.abs(lowest)


def total_loss(
    H: torch.Tensor,
    M: ArrayLike,
    gt: GroundTruth,
    reduction: Literal["mean", "sum"] = "mean",
) -> torch.Tensor:
    return sparse_contrastive(H, M, gt, reduction) + range_loss(H, gt)


def gaussian_target(gt: GroundTruth, shape, sigma_xy: float, sigma_z: float) -> np.ndarray:
    h, w, c = shape
    dy = (np.arange(h) - gt.idx.y)[:, None, None]
    dx = (np.arange(w) - gt.idx.x)[None, :, None]
    dz = (np.arange(c) - gt.idx.z)[None, None, :]
    return np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma_xy ** 2) - dz ** 2 / (2.0 * sigma_z ** 2))


def one_hot_target(gt: GroundTruth, shape) -> np.ndarray:
    target = np.zeros(shape)
    target[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0
    return target


def assignment_loss(
    H: torch.Tensor,
    gt: GroundTruth,
    kind: Literal["binary", "gaussian"],
    sigma_xy: Optional[float] = None,
    sigma_z: Optional[float] = None,
) -> torch.Tensor:
    """Single-peak baselines on sigmoid(H): BCE against one-hot, or MSE against a Gaussian."""
    shape = tuple(H.shape)
    if kind == "binary":
        target = _as_like(one_hot_target(gt, shape), H)
        return F.binary_cross_entropy_with_logits(H, target)
    if kind == "gaussian":
        if not sigma_xy or not sigma_z or sigma_xy <= 0 or sigma_z <= 0:
            raise ValueError("gaussian assignment needs positive sigma_xy and sigma_z")
        target = _as_like(gaussian_target(gt, shape, sigma_xy, sigma_z), H)
        return F.mse_loss(torch.sigmoid(H), target)
    raise ValueError(f"unknown assignment kind '{kind}'")


def heatmap_objective(
    H: torch.Tensor,
    gt: GroundTruth,
    dims: ImageDims,
    cfg: LossConfig,
    margins: Optional[np.ndarray] = None,
) -> torch.Tensor:
    """The configured per-sample heatmap loss."""
    if cfg.kind == "sparse_contrastive":
        if margins is None:
            margins = margin_matrix(gt, dims, H.shape[2], margin_spec_for(dims, cfg))
        return total_loss(H, margins, gt, cfg.reduction)
    if cfg.kind in ("binary", "gaussian"):
        sigma_xy = cfg.sigma_xy if cfg.sigma_xy is not None else float(margin_spec_for(dims, cfg).radius_y)
        return assignment_loss(H, gt, cfg.kind, sigma_xy, cfg.sigma_z)
    raise ValueError(f"loss kind '{cfg.kind}' does not train a heatmap")
