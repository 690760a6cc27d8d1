"""Image IO (PPM/PGM through Pillow), object padding/resizing and composite previews.

Images are uint8 numpy arrays: RGB as (h, w, 3), grayscale as (h, w).
"""

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import CorruptImage, EmptyImage
from ..models.geometry import ImageDims, PlacementBox
from .geometry import clip_box

PathLike = Union[str, Path]

WHITE = 255
# object pixels at or above this value in every channel are treated as transparent
TRANSPARENT_MIN = 250


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Binary P6, maxval 255."""
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PPM")


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Binary P5, maxval 255."""
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PPM")


def read_rgb(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as e:
        raise CorruptImage("cannot read image", detail={"path": str(path), "error": str(e)})


def pad_to_square(image: np.ndarray, fill: int = WHITE) -> np.ndarray:
    """Pad with white on the bottom (wide images) or right (tall images)."""
    if image.size == 0 or image.shape[0] == 0 or image.shape[1] == 0:
        raise EmptyImage("object image has no pixels", detail={"shape": list(image.shape)})
    h, w = image.shape[:2]
    side = max(h, w)
    out = np.full((side, side) + image.shape[2:], fill, dtype=np.uint8)
    out[:h, :w] = image
    return out


def resize(image: np.ndarray, width: int, height: int, resample=Image.Resampling.BILINEAR) -> np.ndarray:
    img = Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8))
    return np.asarray(img.resize((width, height), resample=resample), dtype=np.uint8).copy()


def pixel_rect(box: PlacementBox):
    """Integer pixel bounds (x0, y0, x1, y1) of a box, rounding edges to nearest."""
    x0 = int(np.floor(box.left + 0.5))
    y0 = int(np.floor(box.top + 0.5))
    x1 = int(np.floor(box.right + 0.5))
    y1 = int(np.floor(box.bottom + 0.5))
    return x0, y0, max(x1, x0 + 1), max(y1, y0 + 1)


def composite_preview(bg: np.ndarray, obj: np.ndarray, box: PlacementBox) -> np.ndarray:
    """Paste the object, resized to the clipped box, over the background.

    Near-white object pixels are transparent. Display only.
    """
    dims = ImageDims(width=bg.shape[1], height=bg.shape[0])
    clipped = clip_box(box, dims)
    x0, y0, x1, y1 = pixel_rect(clipped)
    x0, y0 = min(x0, dims.width - 1), min(y0, dims.height - 1)
    x1, y1 = min(x1, dims.width), min(y1, dims.height)
    if obj.size == 0:
        raise EmptyImage("object image has no pixels")

    patch = resize(obj, x1 - x0, y1 - y0, resample=Image.Resampling.NEAREST)
    opaque = ~np.all(patch >= TRANSPARENT_MIN, axis=2)
    out = bg.copy()
    region = out[y0:y1, x0:x1]
    region[opaque] = patch[opaque]
    return out
