"""Boxes, scale arithmetic, lattice conversion and IOU.

Boxes are real-valued [left, top, width, height]; rounding happens only when
converting to a lattice index. Scale is s = sqrt(w*h / (w_b*h_b)).
"""

import math

import numpy as np

from ..errors import EmptyClip
from ..models.geometry import GridIndex, ImageDims, PlacementBox, ScaleGrid


def scale_of_box(box: PlacementBox, dims: ImageDims) -> float:
    return math.sqrt(box.width * box.height / (dims.width * dims.height))


def box_size(scale, aspect, dims: ImageDims):
    """Width and height of a box with the given scale and aspect (w/h).

    Accepts scalars or numpy arrays for `scale`.
    """
    area = np.square(scale) * (dims.width * dims.height)
    return np.sqrt(area * aspect), np.sqrt(area / aspect)


def box_from_index(idx: GridIndex, grid: ScaleGrid, dims: ImageDims, aspect: float) -> PlacementBox:
    """Box centered on (idx.x, idx.y) at scale grid[idx.z]; not clipped."""
    width, height = box_size(grid.values[idx.z], aspect, dims)
    width, height = float(width), float(height)
    return PlacementBox(
        left=idx.x - width / 2.0,
        top=idx.y - height / 2.0,
        width=width,
        height=height,
    )


def nearest_scale_index(scale: float, grid: ScaleGrid) -> int:
    # np.argmin returns the first minimizer, so ties go to the smaller index
    return int(np.argmin(np.abs(np.asarray(grid.values) - scale)))


def index_from_box(box: PlacementBox, grid: ScaleGrid, dims: ImageDims) -> GridIndex:
    cx, cy = box.center
    x = min(max(int(math.floor(cx + 0.5)), 0), dims.width - 1)
    y = min(max(int(math.floor(cy + 0.5)), 0), dims.height - 1)
    z = nearest_scale_index(scale_of_box(box, dims), grid)
    return GridIndex(x=x, y=y, z=z)


def iou_arrays(l1, t1, w1, h1, l2, t2, w2, h2):
    """Elementwise IOU of boxes given as broadcastable coordinate arrays."""
    ix = np.maximum(0.0, np.minimum(l1 + w1, l2 + w2) - np.maximum(l1, l2))
    iy = np.maximum(0.0, np.minimum(t1 + h1, t2 + h2) - np.maximum(t1, t2))
    inter = ix * iy
    union = w1 * h1 + w2 * h2 - inter
    return inter / union


def iou(a: PlacementBox, b: PlacementBox) -> float:
    return float(
        iou_arrays(a.left, a.top, a.width, a.height, b.left, b.top, b.width, b.height)
    )


def clip_box(box: PlacementBox, dims: ImageDims) -> PlacementBox:
    left = max(box.left, 0.0)
    top = max(box.top, 0.0)
    right = min(box.right, float(dims.width))
    bottom = min(box.bottom, float(dims.height))
    if right <= left or bottom <= top:
        raise EmptyClip(
            "box does not intersect the image",
            detail={"box": box.as_list(), "dims": [dims.width, dims.height]},
        )
    return PlacementBox(left=left, top=top, width=right - left, height=bottom - top)
