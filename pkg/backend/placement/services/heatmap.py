"""Post-processing of predicted 3D heatmaps.

Normalization, strict 3x3x3 peak extraction, top-k placement boxes, the two
interactive-search slices, and the TOPH binary format.
"""

import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..errors import CorruptHeatmap, DegenerateHeatmap, IndexOutOfRange
from ..models.geometry import GridIndex, ImageDims, PlacementBox, ScaleGrid
from ..models.heatmap import Heatmap3D, Peak
from .geometry import box_from_index

TOPH_MAGIC = b"TOPH"


def _minmax(data: np.ndarray, what: str) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    lo, hi = data.min(), data.max()
    if hi == lo:
        raise DegenerateHeatmap(f"{what} is constant", detail={"value": float(lo)})
    return (data - lo) / (hi - lo)


def normalize(H: Heatmap3D) -> Heatmap3D:
    """Min-max normalize to [0, 1]."""
    return Heatmap3D(data=_minmax(H.data, "heatmap"), dims=H.dims, grid=H.grid)


def _strict_peak_mask(data: np.ndarray) -> np.ndarray:
    """True where an entry exceeds every neighbor in its truncated 3x3x3 block."""
    padded = np.pad(data, 1, mode="constant", constant_values=-np.inf)
    h, w, c = data.shape
    mask = np.ones(data.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dy == dx == dz == 0:
                    continue
                shifted = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w, 1 + dz:1 + dz + c]
                mask &= data > shifted
    return mask


def _sorted_entries(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """(y, x, z) rows of masked entries, by score descending then (y, x, z)."""
    ys, xs, zs = np.nonzero(mask)
    scores = data[ys, xs, zs]
    order = np.lexsort((zs, xs, ys, -scores))
    return np.stack([ys[order], xs[order], zs[order]], axis=1)


def _peak(data: np.ndarray, y: int, x: int, z: int) -> Peak:
    score = float(np.clip(data[y, x, z], 0.0, 1.0))
    return Peak(idx=GridIndex(x=int(x), y=int(y), z=int(z)), score=score)


def local_maxima(Hn: Heatmap3D) -> List[Peak]:
    data = Hn.data
    return [_peak(data, y, x, z) for y, x, z in _sorted_entries(data, _strict_peak_mask(data))]


def peak_threshold(Hn: Heatmap3D) -> float:
    """Mean plus two population standard deviations of all entries."""
    data = np.asarray(Hn.data, dtype=np.float64)
    return float(data.mean() + 2.0 * data.std())


def top_k_indices(Hn: Heatmap3D, k: int) -> List[Tuple[GridIndex, float]]:
    """The k candidate lattice points, best first.

    Order: global argmax, peaks above threshold, remaining peaks, then
    non-peak entries; each group by score descending, ties by (y, x, z).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    data = Hn.data
    peak_mask = _strict_peak_mask(data)
    peaks = _sorted_entries(data, peak_mask)
    threshold = peak_threshold(Hn)
    strong = [p for p in peaks if data[p[0], p[1], p[2]] > threshold]
    weak = [p for p in peaks if data[p[0], p[1], p[2]] <= threshold]

    argmax = np.unravel_index(int(np.argmax(data)), data.shape)
    chosen: List[Tuple[int, int, int]] = [tuple(int(v) for v in argmax)]
    seen = set(chosen)

    def take(rows) -> bool:
        for row in rows:
            if len(chosen) >= k:
                return True
            key = (int(row[0]), int(row[1]), int(row[2]))
            if key not in seen:
                seen.add(key)
                chosen.append(key)
        return len(chosen) >= k

    if len(chosen) < k and not take(strong) and not take(weak):
        take(_sorted_entries(data, ~peak_mask))

    return [
        (GridIndex(x=x, y=y, z=z), float(data[y, x, z]))
        for y, x, z in chosen[:k]
    ]


def top_k_boxes(Hn: Heatmap3D, k: int, aspect: float) -> List[Tuple[PlacementBox, float]]:
    return [
        (box_from_index(idx, Hn.grid, Hn.dims, aspect), score)
        for idx, score in top_k_indices(Hn, k)
    ]


def slice_fixed_scale(H: Heatmap3D, z: int) -> np.ndarray:
    """Channel z, min-max normalized over that 2D slice only."""
    if not 0 <= z < H.grid.c:
        raise IndexOutOfRange(f"scale channel {z} out of range", detail={"c": H.grid.c})
    return _minmax(H.data[:, :, z], f"scale channel {z}")


def slice_fixed_location(H: Heatmap3D, x: int, y: int) -> Tuple[np.ndarray, int]:
    """Scores over all scales at (x, y) and the best channel (ties to smaller z)."""
    if not (0 <= x < H.dims.width and 0 <= y < H.dims.height):
        raise IndexOutOfRange(f"location ({x}, {y}) out of range")
    vector = np.array(H.data[y, x, :], copy=True)
    return vector, int(np.argmax(vector))


def max_over_scales(H: Heatmap3D) -> np.ndarray:
    """Best score at each location over all scales (a location-only view)."""
    return np.asarray(H.data).max(axis=2)


def channel_to_gray(channel: np.ndarray) -> np.ndarray:
    """8-bit grayscale rendering after min-max normalization; constant maps render black."""
    channel = np.asarray(channel, dtype=np.float64)
    span = channel.max() - channel.min()
    if span == 0:
        return np.zeros(channel.shape, dtype=np.uint8)
    scaled = (channel - channel.min()) / span
    return np.round(scaled * 255.0).astype(np.uint8)


def montage(H: Heatmap3D, columns: int = 4, gap: int = 2) -> np.ndarray:
    """All scale channels tiled into one grayscale image, row-major by channel."""
    h, w, c = H.shape
    rows = -(-c // columns)
    sheet = np.zeros((rows * h + (rows - 1) * gap, columns * w + (columns - 1) * gap), dtype=np.uint8)
    for z in range(c):
        r, col = divmod(z, columns)
        top, left = r * (h + gap), col * (w + gap)
        sheet[top:top + h, left:left + w] = channel_to_gray(H.data[:, :, z])
    return sheet


def write_heatmap(path: Path, H: Heatmap3D) -> None:
    h, w, c = H.shape
    data = np.ascontiguousarray(H.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(TOPH_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(data.tobytes(order="C"))


def read_heatmap(path: Path, grid: Optional[ScaleGrid] = None) -> Heatmap3D:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != TOPH_MAGIC:
        raise CorruptHeatmap("not a TOPH heatmap", detail={"path": str(path)})
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise CorruptHeatmap(
            "heatmap file has the wrong length",
            detail={"path": str(path), "expected": expected, "found": len(raw)},
        )
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float32)
    if grid is not None:
        return Heatmap3D(data=data, dims=ImageDims(width=w, height=h), grid=grid)
    return Heatmap3D.from_array(data)
