"""Evaluation protocols over predicted heatmaps.

Top-k IOU against the single ground truth, normalized score at the ground
truth location for a fixed scale, scale error for a fixed location, and
oracle agreement in the synthetic world. Per-sample values are reduced in
sample order.
"""

from typing import Dict, List, Literal, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import DegenerateHeatmap, EmptyClip, LengthMismatch
from ..models.geometry import GridIndex, ImageDims, PlacementBox, ScaleGrid
from ..models.heatmap import Heatmap3D
from ..models.report import EvalReport
from ..models.scene import GroundTruth, Scene
from .geometry import box_from_index, clip_box, iou, scale_of_box
from .heatmap import normalize, slice_fixed_location, slice_fixed_scale, top_k_boxes, top_k_indices
from .synthworld import oracle_plausibility, plausible_fraction

DEFAULT_THRESHOLDS = (0.95, 0.9, 0.75)
ErrorKind = Literal["abs", "squared"]


class LocationStats(NamedTuple):
    ns_mean: float
    ns_frac: Dict[str, float]
    n_degenerate: int


def threshold_key(t: float) -> str:
    return f"{t:g}"


def _check_aligned(**lists: Sequence) -> int:
    lengths = {name: len(values) for name, values in lists.items()}
    if len(set(lengths.values())) > 1:
        raise LengthMismatch("evaluation inputs are not aligned", detail=lengths)
    return next(iter(lengths.values()), 0)


def _fractions(values: Sequence[float], thresholds: Sequence[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {threshold_key(t): 0.0 for t in thresholds}
    return {threshold_key(t): float((arr > t).mean()) for t in thresholds}


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def clipped_iou(pred: PlacementBox, gt: PlacementBox, dims: ImageDims) -> float:
    """IOU after clipping both boxes to the image; a prediction entirely outside scores 0."""
    try:
        return iou(clip_box(pred, dims), clip_box(gt, dims))
    except EmptyClip:
        return 0.0


def best_iou(H: Heatmap3D, gt: GroundTruth, k: int, aspect: float) -> float:
    return max(clipped_iou(box, gt.box, H.dims) for box, _ in top_k_boxes(H, k, aspect))


def topk_iou_stats(
    heatmaps: Sequence[Heatmap3D],
    gts: Sequence[GroundTruth],
    k: int,
    aspects: Sequence[float],
) -> Tuple[float, float]:
    """(fraction with best IOU > 0.5, mean best IOU) over the top-k boxes."""
    _check_aligned(heatmaps=heatmaps, gts=gts, aspects=aspects)
    ious = [best_iou(H, gt, k, a) for H, gt, a in zip(heatmaps, gts, aspects)]
    return _fractions(ious, [0.5])["0.5"], _mean(ious)


def box_iou_stats(boxes: Sequence[PlacementBox], gts: Sequence[GroundTruth], dims: ImageDims) -> Tuple[float, float]:
    """Same statistics for predictors that emit one box per sample."""
    _check_aligned(boxes=boxes, gts=gts)
    ious = [clipped_iou(box, gt.box, dims) for box, gt in zip(boxes, gts)]
    return _fractions(ious, [0.5])["0.5"], _mean(ious)


def ns_location_stats(
    heatmaps: Sequence[Heatmap3D],
    gts: Sequence[GroundTruth],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> LocationStats:
    """Normalized score at the gt location within the gt scale slice.

    Constant slices are excluded and counted in `n_degenerate`.
    """
    _check_aligned(heatmaps=heatmaps, gts=gts)
    scores, degenerate = [], 0
    for H, gt in zip(heatmaps, gts):
        try:
            scores.append(float(slice_fixed_scale(H, gt.idx.z)[gt.idx.y, gt.idx.x]))
        except DegenerateHeatmap:
            degenerate += 1
    return LocationStats(_mean(scores), _fractions(scores, thresholds), degenerate)


def ns3d_stats(heatmaps: Sequence[Heatmap3D], gts: Sequence[GroundTruth]) -> Tuple[float, int]:
    """Mean normalized score at gt after normalizing the whole volume, and the constant count."""
    _check_aligned(heatmaps=heatmaps, gts=gts)
    scores, degenerate = [], 0
    for H, gt in zip(heatmaps, gts):
        try:
            scores.append(normalize(H).value_at(gt.idx))
        except DegenerateHeatmap:
            degenerate += 1
    return _mean(scores), degenerate


def _scale_error(predicted: float, actual: float, error: ErrorKind) -> float:
    diff = predicted - actual
    return diff * diff if error == "squared" else abs(diff)


def scale_given_location(
    heatmaps: Sequence[Heatmap3D],
    gts: Sequence[GroundTruth],
    aspects: Sequence[float],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    error: ErrorKind = "abs",
) -> Tuple[Dict[str, float], float]:
    _check_aligned(heatmaps=heatmaps, gts=gts, aspects=aspects)
    ious, errors = [], []
    for H, gt, aspect in zip(heatmaps, gts, aspects):
        _, z_hat = slice_fixed_location(H, gt.idx.x, gt.idx.y)
        box = box_from_index(GridIndex(x=gt.idx.x, y=gt.idx.y, z=z_hat), H.grid, H.dims, aspect)
        ious.append(clipped_iou(box, gt.box, H.dims))
        errors.append(_scale_error(H.grid[z_hat], scale_of_box(gt.box, H.dims), error))
    return _fractions(ious, thresholds), _mean(errors)


def top1_scale_error(
    heatmaps: Sequence[Heatmap3D],
    gts: Sequence[GroundTruth],
    error: ErrorKind = "abs",
) -> float:
    """Scale error of the unconstrained top-1 prediction."""
    _check_aligned(heatmaps=heatmaps, gts=gts)
    errors = []
    for H, gt in zip(heatmaps, gts):
        idx, _ = top_k_indices(H, 1)[0]
        errors.append(_scale_error(H.grid[idx.z], scale_of_box(gt.box, H.dims), error))
    return _mean(errors)


def oracle_agreement(heatmaps: Sequence[Heatmap3D], scenes: Sequence[Scene], k: int = 5) -> Tuple[float, float]:
    """(top-1 hit rate, top-k hit rate) of oracle-plausible predictions."""
    _check_aligned(heatmaps=heatmaps, scenes=scenes)
    top1, topk = [], []
    for H, scene in zip(heatmaps, scenes):
        hits = [oracle_plausibility(scene, box) for box, _ in top_k_boxes(H, k, scene.aspect)]
        top1.append(float(hits[0]))
        topk.append(float(any(hits)))
    return _mean(top1), _mean(topk)


def box_oracle_agreement(boxes: Sequence[PlacementBox], scenes: Sequence[Scene]) -> float:
    _check_aligned(boxes=boxes, scenes=scenes)
    return _mean([float(oracle_plausibility(scene, box)) for box, scene in zip(boxes, scenes)])


def chance_level(scenes: Sequence[Scene], grid: ScaleGrid) -> float:
    """Mean plausible-cell fraction: the hit rate of a uniformly random lattice guess."""
    return _mean([plausible_fraction(scene, grid) for scene in scenes])


def heatmap_report(
    heatmaps: Sequence[Heatmap3D],
    scenes: Sequence[Scene],
    grid: ScaleGrid,
    k: int = 5,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    error: ErrorKind = "abs",
    mean_forward_ms: float = 0.0,
) -> EvalReport:
    """Run every protocol over aligned heatmaps and scenes."""
    _check_aligned(heatmaps=heatmaps, scenes=scenes)
    gts = [scene.gt for scene in scenes]
    aspects = [scene.aspect for scene in scenes]
    frac5, mean5 = topk_iou_stats(heatmaps, gts, k, aspects)
    frac1, mean1 = topk_iou_stats(heatmaps, gts, 1, aspects)
    location = ns_location_stats(heatmaps, gts, thresholds)
    ns3d_mean, _ = ns3d_stats(heatmaps, gts)
    scale_frac, scale_err = scale_given_location(heatmaps, gts, aspects, thresholds, error)
    hit1, hitk = oracle_agreement(heatmaps, scenes, k)
    return EvalReport(
        n_samples=len(scenes),
        frac_iou_gt_05=frac5,
        mean_iou=mean5,
        top1_frac_iou_gt_05=frac1,
        top1_mean_iou=mean1,
        ns_mean=location.ns_mean,
        ns_frac=location.ns_frac,
        ns3d_mean=ns3d_mean,
        n_degenerate=location.n_degenerate,
        scale_iou_frac=scale_frac,
        scale_mean_err=scale_err,
        top1_scale_mean_err=top1_scale_error(heatmaps, gts, error),
        oracle_top1_hit=hit1,
        oracle_top5_hit=hitk,
        chance_level=chance_level(scenes, grid),
        mean_forward_ms=mean_forward_ms,
    )


def box_report(
    boxes: Sequence[PlacementBox],
    scenes: Sequence[Scene],
    grid: ScaleGrid,
    mean_forward_ms: float = 0.0,
) -> EvalReport:
    """Report for a single-box predictor; its top-1 and top-5 coincide."""
    _check_aligned(boxes=boxes, scenes=scenes)
    if not scenes:
        return EvalReport(n_samples=0, frac_iou_gt_05=0.0, mean_iou=0.0)
    dims = scenes[0].dims
    gts = [scene.gt for scene in scenes]
    frac, mean = box_iou_stats(boxes, gts, dims)
    hit = box_oracle_agreement(boxes, scenes)
    errors = [abs(scale_of_box(b, dims) - scale_of_box(gt.box, dims)) for b, gt in zip(boxes, gts)]
    return EvalReport(
        n_samples=len(scenes),
        frac_iou_gt_05=frac,
        mean_iou=mean,
        top1_frac_iou_gt_05=frac,
        top1_mean_iou=mean,
        top1_scale_mean_err=_mean(errors),
        oracle_top1_hit=hit,
        oracle_top5_hit=hit,
        chance_level=chance_level(scenes, grid),
        mean_forward_ms=mean_forward_ms,
    )


def report_frames(report: EvalReport) -> List[pd.DataFrame]:
    """One frame per table: top-k IOU, location given scale, scale given location."""
    iou = pd.DataFrame(
        {
            "IOU>0.5 (top-5)": [report.frac_iou_gt_05],
            "Mean IOU (top-5)": [report.mean_iou],
            "IOU>0.5 (top-1)": [report.top1_frac_iou_gt_05],
            "Mean IOU (top-1)": [report.top1_mean_iou],
            "Oracle hit@1": [report.oracle_top1_hit],
            "Oracle hit@5": [report.oracle_top5_hit],
            "Chance": [report.chance_level],
        }
    )
    location = pd.DataFrame(
        {
            **{f"NS>{key}": [value] for key, value in report.ns_frac.items()},
            "Mean NS": [report.ns_mean],
            "Mean NS (3D)": [report.ns3d_mean],
            "Degenerate": [report.n_degenerate],
        }
    )
    scale = pd.DataFrame(
        {
            **{f"IOU>{key}": [value] for key, value in report.scale_iou_frac.items()},
            "Mean Error": [report.scale_mean_err],
            "Mean Error (top-1)": [report.top1_scale_mean_err],
        }
    )
    return [iou, location, scale]


def render_tables(report: EvalReport) -> str:
    titles = ("Top-k IOU", "Location given scale", "Scale given location")
    blocks = [f"samples: {report.n_samples}   forward: {report.mean_forward_ms:.2f} ms"]
    for title, frame in zip(titles, report_frames(report)):
        blocks.append(f"{title}\n{frame.to_string(index=False, float_format=lambda v: f'{v:.4f}')}")
    return "\n\n".join(blocks) + "\n"
