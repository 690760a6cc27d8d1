import math

import numpy as np
import pytest
import torch

from backend.placement.config import LossConfig
from backend.placement.errors import ShapeMismatch
from backend.placement.models.geometry import GridIndex, ImageDims, ScaleGrid
from backend.placement.models.loss import MarginSpec
from backend.placement.models.scene import GroundTruth
from backend.placement.services.diffcore import grad_check
from backend.placement.services.geometry import box_from_index
from backend.placement.services.loss import (
    assignment_loss,
    gaussian_target,
    heatmap_objective,
    margin_matrix,
    margin_spec_for,
    range_loss,
    scaled_radius,
    sparse_contrastive,
    total_loss,
)

DIMS = ImageDims.square(16)
C = 4
SPEC = MarginSpec(radius_x=2, radius_y=2, radius_z=1, margin=0.1)


def make_gt(x=7, y=5, z=2):
    idx = GridIndex(x=x, y=y, z=z)
    grid = ScaleGrid(values=[0.2, 0.3, 0.4, 0.5])
    return GroundTruth(idx=idx, box=box_from_index(idx, grid, DIMS, 1.0))


def as_tensor(data):
    return torch.tensor(data, dtype=torch.float64, requires_grad=True)


def test_margin_matrix_neighborhood():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    assert M.shape == (16, 16, C)
    assert M[5, 7, 2] == 0.0
    assert M[5, 9, 2] == 0.0
    assert M[5, 10, 2] == pytest.approx(0.1)
    assert (M == 0).sum() == 5 * 5 * 3


def test_margin_matrix_clipped_at_border():
    gt = make_gt(x=0, y=15, z=0)
    M = margin_matrix(gt, DIMS, C, SPEC)
    assert (M == 0).sum() == 3 * 3 * 2


def test_scaled_radius_defaults():
    assert scaled_radius(224) == 20
    assert scaled_radius(64) == 6
    spec = margin_spec_for(ImageDims.square(64), LossConfig())
    assert (spec.radius_x, spec.radius_y, spec.radius_z, spec.margin) == (6, 6, 2, 0.1)


def test_sparse_contrastive_zero_when_dominated():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    data = np.where(M > 0, 0.85, 1.0)
    data[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0
    assert sparse_contrastive(as_tensor(data), M, gt).item() == 0.0


def test_sparse_contrastive_constant_heatmap():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    loss = sparse_contrastive(as_tensor(np.full(M.shape, 0.3)), M, gt)
    assert loss.item() == pytest.approx(0.1 * (M > 0).sum() / M.size)


def test_sparse_contrastive_single_violation():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    data = np.zeros(M.shape)
    data[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0
    base = sparse_contrastive(as_tensor(data), M, gt).item()
    data[0, 0, 0] = 1.2
    bumped = sparse_contrastive(as_tensor(data), M, gt).item()
    assert bumped - base == pytest.approx(0.3 / M.size)


def test_sparse_contrastive_sum_reduction():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    H = as_tensor(np.full(M.shape, 0.3))
    assert sparse_contrastive(H, M, gt, "sum").item() == pytest.approx(0.1 * (M > 0).sum())


def test_sparse_contrastive_shape_mismatch():
    gt = make_gt()
    with pytest.raises(ShapeMismatch):
        sparse_contrastive(as_tensor(np.zeros((16, 16, 3))), np.zeros((16, 16, 4)), gt)


def test_range_loss_values():
    gt = make_gt()
    data = np.full((16, 16, C), 0.5)
    data[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0
    data[0, 0, 0] = 0.0
    assert range_loss(as_tensor(data), gt).item() == 0.0
    data[gt.idx.y, gt.idx.x, gt.idx.z] = 0.8
    data[0, 0, 0] = -0.1
    assert range_loss(as_tensor(data), gt).item() == pytest.approx(0.3)


def test_range_loss_gradient_goes_to_first_minimizer():
    gt = make_gt()
    data = np.full((16, 16, C), 0.5)
    data[1, 0, 0] = -0.2
    data[2, 0, 0] = -0.2
    H = as_tensor(data)
    range_loss(H, gt).backward()
    assert H.grad[1, 0, 0].item() == -1.0
    assert H.grad[2, 0, 0].item() == 0.0
    assert H.grad[gt.idx.y, gt.idx.x, gt.idx.z].item() == -1.0


def test_total_loss_is_sum_and_positive_on_constant():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    rng = np.random.default_rng(0)
    H = as_tensor(rng.random(M.shape))
    assert total_loss(H, M, gt).item() == sparse_contrastive(H, M, gt).item() + range_loss(H, gt).item()
    for value in (-2.0, 0.0, 0.5, 3.0):
        assert total_loss(as_tensor(np.full(M.shape, value)), M, gt).item() >= 1.0


def test_zero_loss_construction():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    data = np.where(M > 0, 0.0, 0.5)
    data[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0
    assert total_loss(as_tensor(data), M, gt).item() < 1e-12


def test_translation_invariance():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    data = np.random.default_rng(1).random(M.shape)
    a, b = as_tensor(data), as_tensor(data + 0.7)
    assert sparse_contrastive(a, M, gt).item() == pytest.approx(sparse_contrastive(b, M, gt).item(), abs=1e-12)
    assert range_loss(a, gt).item() != pytest.approx(range_loss(b, gt).item())


def test_raising_an_entry_adds_delta_over_n():
    gt = make_gt()
    M = margin_matrix(gt, DIMS, C, SPEC)
    data = np.where(M > 0, 0.0, 0.5)
    data[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0
    data[12, 12, 0] = 0.9
    base = total_loss(as_tensor(data), M, gt).item()
    data[12, 12, 0] = 0.9 + 0.05
    assert total_loss(as_tensor(data), M, gt).item() - base == pytest.approx(0.05 / M.size)


def test_multi_peak_heatmap_only_penalized_by_assignment_losses():
    gt = make_gt(x=3, y=3, z=1)
    M = margin_matrix(gt, DIMS, C, SPEC)
    data = np.zeros(M.shape)
    data[3, 3, 1] = 1.0
    data[12, 12, 2] = 0.85  # second plausible mode far from gt
    H = as_tensor(data)
    assert sparse_contrastive(H, M, gt).item() == 0.0
    assert assignment_loss(H, gt, "binary").item() > 0
    assert assignment_loss(H, gt, "gaussian", 2.0, 1.0).item() > 0


def test_gaussian_target_values():
    gt = make_gt()
    target = gaussian_target(gt, (16, 16, C), sigma_xy=3.0, sigma_z=2.0)
    assert target[5, 7, 2] == 1.0
    assert target[5, 10, 2] == pytest.approx(math.exp(-0.5))
    assert target[5, 7, 0] == pytest.approx(math.exp(-0.5))


def test_binary_assignment_reaches_one_hot():
    gt = make_gt()
    H = torch.zeros((8, 8, 2), dtype=torch.float64, requires_grad=True)
    gt = GroundTruth(idx=GridIndex(x=3, y=4, z=1), box=gt.box)
    opt = torch.optim.SGD([H], lr=1000.0)
    for _ in range(600):
        opt.zero_grad()
        loss = assignment_loss(H, gt, "binary")
        loss.backward()
        opt.step()
    assert assignment_loss(H, gt, "binary").item() < 1e-3
    assert torch.sigmoid(H)[4, 3, 1] > 0.9


def test_heatmap_objective_dispatch():
    gt = make_gt()
    dims = ImageDims.square(16)
    H = as_tensor(np.random.default_rng(2).random((16, 16, C)))
    M = margin_matrix(gt, dims, C, margin_spec_for(dims, LossConfig()))
    assert heatmap_objective(H, gt, dims, LossConfig()).item() == pytest.approx(total_loss(H, M, gt).item())
    binary = heatmap_objective(H, gt, dims, LossConfig(kind="binary"))
    assert binary.item() == pytest.approx(assignment_loss(H, gt, "binary").item())
    with pytest.raises(ValueError):
        heatmap_objective(H, gt, dims, LossConfig(kind="regression"))


def _away_from_kinks(rng, M, gt):
    """A random heatmap whose hinge arguments and range terms are at least 1e-3 from zero."""
    while True:
        data = rng.normal(0.0, 1.0, M.shape)
        args = data - data[gt.idx.y, gt.idx.x, gt.idx.z] + M
        args[gt.idx.y, gt.idx.x, gt.idx.z] = 1.0  # the gt hinge is identically zero
        flat = np.sort(data.reshape(-1))
        if (
            np.abs(args).min() >= 1e-3
            and flat[1] - flat[0] >= 1e-3
            and abs(flat[0]) >= 1e-3
            and abs(1 - data[gt.idx.y, gt.idx.x, gt.idx.z]) >= 1e-3
        ):
            return data


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    gt = make_gt(x=int(rng.integers(8)), y=int(rng.integers(8)), z=int(rng.integers(2)))
    dims = ImageDims.square(8)
    spec = MarginSpec(radius_x=1, radius_y=1, radius_z=0, margin=0.1)
    M = margin_matrix(gt, dims, 2, spec)
    H = as_tensor(_away_from_kinks(rng, M, gt))
    assert grad_check(lambda: total_loss(H, M, gt), [H]) < 1e-4
    assert grad_check(lambda: assignment_loss(H, gt, "binary"), [H]) < 1e-4
    assert grad_check(lambda: assignment_loss(H, gt, "gaussian", 1.5, 1.0), [H]) < 1e-4
