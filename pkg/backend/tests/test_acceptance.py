"""Desk-scale training runs on the synthetic world. Enable with --runslow."""

import pytest

from backend.placement.config import RunConfig
from backend.placement.services.synthworld import generate_dataset
from backend.placement.services.trainer import evaluate_model, train

pytestmark = pytest.mark.slow

N_TRAIN = 2000
N_EVAL = 200


def run_cfg(**train_changes):
    cfg = RunConfig()
    loss_kind = train_changes.pop("loss_kind", None)
    tcfg = cfg.train.model_copy(update=train_changes)
    if loss_kind is not None:
        tcfg = tcfg.model_copy(update={"loss": tcfg.loss.model_copy(update={"kind": loss_kind})})
    return cfg.model_copy(update={"train": tcfg})


@pytest.fixture(scope="module")
def world():
    cfg = RunConfig()
    train_scenes = generate_dataset(100, N_TRAIN, cfg.oracle, grid=cfg.grid, workers=4)
    eval_scenes = generate_dataset(200, N_EVAL, cfg.oracle, grid=cfg.grid, workers=4)
    return train_scenes, eval_scenes


@pytest.fixture(scope="module")
def bimodal_world():
    cfg = RunConfig()
    train_scenes = generate_dataset(300, N_TRAIN, cfg.oracle, grid=cfg.grid, layout="bimodal", workers=4)
    eval_scenes = generate_dataset(400, N_EVAL, cfg.oracle, grid=cfg.grid, layout="bimodal", workers=4)
    return train_scenes, eval_scenes


@pytest.fixture(scope="module")
def reports(world):
    """Eval reports keyed by (loss kind, variant), trained lazily and cached per module."""
    train_scenes, eval_scenes = world
    cache = {}

    def get(loss_kind="sparse_contrastive", variant="full"):
        key = (loss_kind, variant)
        if key not in cache:
            cfg = run_cfg(loss_kind=loss_kind, variant=variant)
            result = train(cfg, train_scenes)
            cache[key] = evaluate_model(result.model, eval_scenes, cfg)
        return cache[key]

    return get


def test_sparse_contrastive_beats_assignment_losses(reports):
    contrastive = reports().frac_iou_gt_05
    gaussian = reports("gaussian").frac_iou_gt_05
    binary = reports("binary").frac_iou_gt_05
    assert contrastive > gaussian > binary
    assert contrastive - gaussian >= 0.15


def test_local_correlation_beats_ablations(reports):
    full = reports().frac_iou_gt_05
    concat = reports(variant="local_concat").frac_iou_gt_05
    global_only = reports(variant="global_only").frac_iou_gt_05
    assert full - concat >= 0.05
    assert concat - global_only >= 0.05


def test_trained_model_agrees_with_oracle(reports):
    report = reports()
    assert report.oracle_top1_hit >= 0.70
    assert report.oracle_top5_hit >= 0.85
    assert report.oracle_top1_hit > report.chance_level


def test_interactive_search_is_no_worse_than_unconstrained(reports):
    report = reports()
    assert report.ns_mean >= report.ns3d_mean
    assert report.scale_mean_err <= report.top1_scale_mean_err


def test_dense_model_beats_regression_on_bimodal_scenes(bimodal_world):
    train_scenes, eval_scenes = bimodal_world
    hits = {}
    for kind in ("sparse_contrastive", "regression"):
        cfg = run_cfg(loss_kind=kind)
        result = train(cfg, train_scenes)
        hits[kind] = evaluate_model(result.model, eval_scenes, cfg).oracle_top5_hit
    assert hits["sparse_contrastive"] - hits["regression"] >= 0.20


def test_full_training_runs_are_bit_identical(tmp_path, world):
    train_scenes, _ = world
    cfg = run_cfg(total_steps=200, eval_every=100)
    train(cfg, train_scenes, checkpoint_dir=tmp_path / "a")
    train(cfg, train_scenes, checkpoint_dir=tmp_path / "b")
    for name in ("manifest.json", "params.bin", "moments.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
