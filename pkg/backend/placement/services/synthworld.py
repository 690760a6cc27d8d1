"""Procedural scenes with an analytic placement-plausibility oracle.

A scene is a sky gradient above a horizon row, flat ground below it, and up to
three obstacle rectangles on the ground. Grounded objects are plausible when
their bottom edge sits on the ground and their scale follows a linear
perspective rule in that row; flyers are plausible anywhere inside the sky
within a fixed scale band. Object category is encoded by hue.
"""

import colorsys
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..errors import CorruptDataset, OracleInfeasible
from ..models.geometry import GridIndex, ImageDims, PlacementBox, ScaleGrid
from ..models.heatmap import Heatmap3D
from ..models.scene import GroundTruth, ObjectSpec, OracleParams, Scene, SceneMeta
from .geometry import box_from_index, box_size, index_from_box, iou_arrays
from .imaging import read_rgb, write_ppm

logger = structlog.get_logger(__name__)

MAX_DRAWS = 10_000
MAX_RETRIES = 8
DATASET_FORMAT = 1
OBJECT_LONG_SIDE = 32
# slack for comparing lattice scales against band edges
_SCALE_EPS = 1e-9


def derive_seed(seed: int, *salt: int) -> int:
    return int(np.random.SeedSequence([seed, *salt]).generate_state(1)[0])


# -- oracle ---------------------------------------------------------------------

def _plausible(left, top, width, height, scene: Scene):
    """Vectorized plausibility over broadcastable box coordinate arrays."""
    dims = scene.dims
    W, H = float(dims.width), float(dims.height)
    horizon = float(scene.horizon_row)
    params = scene.oracle

    inside = (left >= 0) & (top >= 0) & (left + width <= W) & (top + height <= H)
    scale = np.sqrt(width * height / (W * H))
    bottom = top + height

    if scene.spec.category == "flyer":
        lo, hi = params.flyer_band
        return (
            inside
            & (bottom <= horizon)
            & (scale >= lo - _SCALE_EPS)
            & (scale <= hi + _SCALE_EPS)
        )

    denom = max(H - 1.0 - horizon, 1.0)
    target = params.s_min + (params.s_max - params.s_min) * (bottom - horizon) / denom
    ok = inside & (bottom >= horizon) & (np.abs(scale - target) <= params.tau_s + _SCALE_EPS)
    for obs in scene.obstacles:
        overlap = iou_arrays(left, top, width, height, obs.left, obs.top, obs.width, obs.height)
        ok = ok & (overlap < params.max_obstacle_iou)
    return ok


def perspective_scale(scene: Scene, bottom: float) -> float:
    """Scale s*(y_bot) a grounded object should have with its bottom edge at row `bottom`."""
    params = scene.oracle
    denom = max(scene.dims.height - 1.0 - scene.horizon_row, 1.0)
    return params.s_min + (params.s_max - params.s_min) * (bottom - scene.horizon_row) / denom


def oracle_plausibility(scene: Scene, box: PlacementBox) -> bool:
    return bool(_plausible(box.left, box.top, box.width, box.height, scene))


def oracle_mask(scene: Scene, grid: ScaleGrid) -> np.ndarray:
    """Boolean (h, w, c) plausibility of every lattice placement."""
    dims = scene.dims
    widths, heights = box_size(np.asarray(grid.values, dtype=np.float64), scene.aspect, dims)
    ys = np.arange(dims.height, dtype=np.float64)[:, None, None]
    xs = np.arange(dims.width, dtype=np.float64)[None, :, None]
    widths = widths[None, None, :]
    heights = heights[None, None, :]
    mask = _plausible(xs - widths / 2.0, ys - heights / 2.0, widths, heights, scene)
    return np.broadcast_to(mask, (dims.height, dims.width, grid.c)).copy()


def oracle_heatmap(scene: Scene, grid: ScaleGrid) -> Heatmap3D:
    return Heatmap3D(data=oracle_mask(scene, grid).astype(np.float64), dims=scene.dims, grid=grid)


def plausible_fraction(scene: Scene, grid: ScaleGrid) -> float:
    return float(oracle_mask(scene, grid).mean())


def sample_gt_placement(scene: Scene, grid: ScaleGrid, seed: int) -> GroundTruth:
    """Rejection-sample lattice points uniformly until one is plausible."""
    dims = scene.dims
    mask = oracle_mask(scene, grid)
    rng = np.random.default_rng(seed)
    if mask.any():
        for _ in range(MAX_DRAWS):
            x = int(rng.integers(0, dims.width))
            y = int(rng.integers(0, dims.height))
            z = int(rng.integers(0, grid.c))
            if mask[y, x, z]:
                idx = GridIndex(x=x, y=y, z=z)
                return GroundTruth(idx=idx, box=box_from_index(idx, grid, dims, scene.aspect))
    raise OracleInfeasible(
        "no plausible placement found",
        detail={"draws": MAX_DRAWS, "seed": seed, "category": scene.spec.category},
    )


# -- rendering ------------------------------------------------------------------

def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array([round(255 * c) for c in colorsys.hsv_to_rgb(h, s, v)], dtype=np.float64)


def _render_background(rng, dims: ImageDims, horizon_row: int, obstacles: Sequence[PlacementBox]) -> np.ndarray:
    sky_top = _hsv(rng.uniform(0.55, 0.62), rng.uniform(0.45, 0.7), rng.uniform(0.75, 0.95))
    sky_low = _hsv(rng.uniform(0.52, 0.58), rng.uniform(0.1, 0.3), rng.uniform(0.9, 1.0))
    ground = _hsv(rng.uniform(0.20, 0.35), rng.uniform(0.4, 0.7), rng.uniform(0.35, 0.6))
    obstacle = _hsv(rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.12), rng.uniform(0.12, 0.3))

    img = np.empty((dims.height, dims.width, 3), dtype=np.float64)
    if horizon_row > 0:
        t = np.arange(horizon_row, dtype=np.float64)[:, None] / max(horizon_row - 1, 1)
        img[:horizon_row] = (sky_top[None, :] * (1.0 - t) + sky_low[None, :] * t)[:, None, :]
    img[horizon_row:] = ground
    for obs in obstacles:
        top, left = int(obs.top), int(obs.left)
        img[top:top + int(obs.height), left:left + int(obs.width)] = obstacle
    return np.round(img).astype(np.uint8)


def _render_object(spec: ObjectSpec) -> np.ndarray:
    if spec.aspect >= 1.0:
        w_o, h_o = OBJECT_LONG_SIDE, max(1, int(round(OBJECT_LONG_SIDE / spec.aspect)))
    else:
        w_o, h_o = max(1, int(round(OBJECT_LONG_SIDE * spec.aspect))), OBJECT_LONG_SIDE
    canvas = np.full((h_o, w_o, 3), 255, dtype=np.uint8)
    if spec.shape == "rectangle":
        canvas[1:h_o - 1, 1:w_o - 1] = spec.color
    else:
        yy, xx = np.mgrid[0:h_o, 0:w_o]
        rx, ry = max(w_o / 2.0 - 1.0, 0.5), max(h_o / 2.0 - 1.0, 0.5)
        inside = ((xx + 0.5 - w_o / 2.0) / rx) ** 2 + ((yy + 0.5 - h_o / 2.0) / ry) ** 2 <= 1.0
        canvas[inside] = spec.color
    return canvas


def _object_spec(rng, category: str) -> ObjectSpec:
    aspect = float(math.exp(rng.uniform(math.log(0.5), math.log(2.0))))
    hue = rng.uniform(0.0, 0.08) if category == "grounded" else rng.uniform(0.78, 0.9)
    color = _hsv(hue, rng.uniform(0.75, 1.0), rng.uniform(0.6, 0.9)).astype(int)
    shape = "ellipse" if rng.random() < 0.5 else "rectangle"
    return ObjectSpec(category=category, aspect=min(max(aspect, 0.5), 2.0), color=tuple(int(c) for c in color), shape=shape)


def _obstacles(rng, dims: ImageDims, horizon_row: int, layout: str) -> List[PlacementBox]:
    ground_rows = dims.height - horizon_row - 1
    if layout == "bimodal":
        width = dims.width // 3
        left = (dims.width - width) // 2
        return [PlacementBox(left=left, top=horizon_row + 1, width=width, height=ground_rows)]
    if ground_rows < 4:
        return []
    boxes = []
    for _ in range(int(rng.integers(0, 4))):
        w = int(rng.integers(4, max(4, dims.width // 4) + 1))
        h = int(rng.integers(4, max(4, ground_rows // 2) + 1))
        left = int(rng.integers(0, dims.width - w + 1))
        top = int(rng.integers(horizon_row + 1, dims.height - h + 1))
        boxes.append(PlacementBox(left=left, top=top, width=w, height=h))
    return boxes


def _build_scene(rng, seed: int, params: OracleParams, dims: ImageDims, grid: ScaleGrid, layout: str) -> Scene:
    horizon_frac = float(rng.uniform(params.horizon_frac_min, params.horizon_frac_max))
    horizon_row = int(math.floor(horizon_frac * dims.height + 0.5))
    if layout == "bimodal":
        category = "grounded"
    else:
        category = "grounded" if rng.random() < 0.5 else "flyer"
    spec = _object_spec(rng, category)
    obstacles = _obstacles(rng, dims, horizon_row, layout)
    draft = Scene(
        bg=_render_background(rng, dims, horizon_row, obstacles),
        obj=_render_object(spec),
        spec=spec,
        oracle=params,
        horizon_frac=horizon_frac,
        horizon_row=horizon_row,
        gt=None,
        seed=seed,
        obstacles=obstacles,
        layout=layout,
    )
    gt = sample_gt_placement(draft, grid, int(rng.integers(0, 2 ** 31 - 1)))
    return draft.with_changes(gt=gt)


def generate_scene(
    seed: int,
    params: Optional[OracleParams] = None,
    dims: Optional[ImageDims] = None,
    grid: Optional[ScaleGrid] = None,
    layout: str = "standard",
) -> Scene:
    """Deterministic in (seed, params, dims, grid, layout)."""
    params = params or OracleParams()
    dims = dims or ImageDims.square(64)
    grid = grid or ScaleGrid()
    for attempt in range(MAX_RETRIES + 1):
        attempt_seed = seed if attempt == 0 else derive_seed(seed, attempt)
        try:
            return _build_scene(np.random.default_rng(attempt_seed), seed, params, dims, grid, layout)
        except OracleInfeasible as e:
            logger.warning("scene.infeasible", seed=seed, attempt=attempt, **e.detail)
    raise OracleInfeasible("scene generation failed after retries", detail={"seed": seed, "retries": MAX_RETRIES})


def _generate_indexed(args: Tuple[int, int, OracleParams, ImageDims, ScaleGrid, str]) -> Scene:
    seed, index, params, dims, grid, layout = args
    return generate_scene(derive_seed(seed, index), params, dims, grid, layout)


def generate_dataset(
    seed: int,
    n: int,
    params: Optional[OracleParams] = None,
    dims: Optional[ImageDims] = None,
    grid: Optional[ScaleGrid] = None,
    layout: str = "standard",
    workers: int = 1,
) -> List[Scene]:
    """n scenes; scene i uses a seed derived from (seed, i), so order never depends on workers."""
    params = params or OracleParams()
    dims = dims or ImageDims.square(64)
    grid = grid or ScaleGrid()
    jobs = [(seed, i, params, dims, grid, layout) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scenes = list(pool.map(_generate_indexed, jobs))
    else:
        scenes = [_generate_indexed(job) for job in jobs]
    logger.info("dataset.generated", n=n, seed=seed, layout=layout)
    return scenes


# -- dataset IO -------------------------------------------------------------------

def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _remove_stale_samples(directory: Path, count: int) -> None:
    """Delete sample files left by an earlier, larger dataset in the same directory."""
    for pattern in ("bg_*.ppm", "obj_*.ppm", "meta_*.json"):
        for path in directory.glob(pattern):
            index = path.stem.split("_", 1)[1]
            if not index.isdigit() or int(index) >= count:
                path.unlink()


def write_dataset(directory, scenes: Sequence[Scene], grid: ScaleGrid) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dims = scenes[0].dims if scenes else ImageDims.square(64)
    _remove_stale_samples(directory, len(scenes))
    for i, scene in enumerate(scenes):
        write_ppm(directory / f"bg_{i:06d}.ppm", scene.bg)
        write_ppm(directory / f"obj_{i:06d}.ppm", scene.obj)
        _dump_json(directory / f"meta_{i:06d}.json", scene.meta().model_dump(mode="json"))
    _dump_json(
        directory / "manifest.json",
        {
            "format": DATASET_FORMAT,
            "count": len(scenes),
            "dims": [dims.width, dims.height],
            "grid": list(grid.values),
        },
    )
    logger.info("dataset.written", path=str(directory), count=len(scenes))
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise CorruptDataset("manifest.json is missing", detail={"path": str(path)})
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptDataset("manifest.json is not valid JSON", detail={"error": str(e)})
    if manifest.get("format") != DATASET_FORMAT:
        raise CorruptDataset("unsupported dataset format", detail={"format": manifest.get("format")})
    return manifest


def read_scene(directory, index: int, manifest: Optional[dict] = None) -> Scene:
    """Load and validate one stored scene."""
    directory = Path(directory)
    manifest = manifest or read_manifest(directory)
    count = int(manifest["count"])
    if not 0 <= index < count:
        raise CorruptDataset("scene index out of range", detail={"index": index, "count": count})
    paths = [directory / f"{kind}_{index:06d}.{ext}" for kind, ext in (("bg", "ppm"), ("obj", "ppm"), ("meta", "json"))]
    missing = [p.name for p in paths if not p.exists()]
    if missing:
        raise CorruptDataset("sample files are missing", detail={"index": index, "missing": missing})
    try:
        meta = SceneMeta.model_validate_json(paths[2].read_text())
    except ValueError as e:
        raise CorruptDataset("scene metadata is invalid", detail={"index": index, "error": str(e)})
    scene = Scene.from_meta(meta, read_rgb(paths[0]), read_rgb(paths[1]))
    width, height = manifest["dims"]
    if scene.bg.shape[:2] != (height, width):
        raise CorruptDataset("background size does not match manifest", detail={"index": index})
    grid = ScaleGrid(values=manifest["grid"])
    if index_from_box(scene.gt.box, grid, scene.dims) != scene.gt.idx:
        raise CorruptDataset(
            "stored ground-truth index does not match its box",
            detail={"index": index, "idx": scene.gt.idx.model_dump(), "box": scene.gt.box.as_list()},
        )
    if not oracle_plausibility(scene, scene.gt.box):
        raise CorruptDataset("stored ground truth is not plausible", detail={"index": index})
    return scene


def read_dataset(directory) -> Tuple[List[Scene], ScaleGrid]:
    """Load every scene, checking the manifest against the files and each gt against the oracle."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    count = int(manifest["count"])
    n_meta = len(list(directory.glob("meta_*.json")))
    if n_meta != count:
        raise CorruptDataset(
            "manifest count does not match files",
            detail={"manifest": count, "files": n_meta},
        )
    scenes = [read_scene(directory, i, manifest) for i in range(count)]
    return scenes, ScaleGrid(values=manifest["grid"])
