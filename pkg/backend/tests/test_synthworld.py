import json

import numpy as np
import pytest

from backend.placement.errors import CorruptDataset, OracleInfeasible
from backend.placement.models.geometry import GridIndex, ImageDims, PlacementBox, ScaleGrid
from backend.placement.models.scene import ObjectSpec, OracleParams, Scene
from backend.placement.services.geometry import box_from_index
from backend.placement.services.synthworld import (
    generate_dataset,
    generate_scene,
    oracle_heatmap,
    oracle_mask,
    oracle_plausibility,
    perspective_scale,
    plausible_fraction,
    read_dataset,
    read_scene,
    sample_gt_placement,
    write_dataset,
)

SMALL_GRID = ScaleGrid(values=[0.2, 0.25, 0.3, 0.35])


def hand_scene(category, horizon_row=24, obstacles=()):
    return Scene(
        bg=np.zeros((64, 64, 3), dtype=np.uint8),
        obj=np.zeros((8, 8, 3), dtype=np.uint8),
        spec=ObjectSpec(category=category, aspect=1.0, color=(200, 0, 0), shape="rectangle"),
        oracle=OracleParams(),
        horizon_frac=horizon_row / 64,
        horizon_row=horizon_row,
        gt=None,
        seed=0,
        obstacles=list(obstacles),
    )


def centered(cx, cy, s, size=64):
    side = s * size
    return PlacementBox(left=cx - side / 2, top=cy - side / 2, width=side, height=side)


def test_flyer_oracle_examples():
    scene = hand_scene("flyer")
    assert oracle_plausibility(scene, centered(16, 8, 0.2))
    assert not oracle_plausibility(scene, centered(16, 8, 0.4))  # outside the band
    assert not oracle_plausibility(scene, centered(16, 20, 0.2))  # bottom below the horizon
    assert not oracle_plausibility(scene, centered(2, 8, 0.2))  # leaves the image


def test_grounded_oracle_follows_perspective():
    scene = hand_scene("grounded")
    assert perspective_scale(scene, 24) == pytest.approx(0.15)
    assert perspective_scale(scene, 63) == pytest.approx(0.6)
    side = 0.6 * 64
    on_ground = PlacementBox(left=12.8, top=63 - side, width=side, height=side)
    assert oracle_plausibility(scene, on_ground)
    small = PlacementBox(left=12.8, top=63 - 0.45 * 64, width=0.45 * 64, height=0.45 * 64)
    assert not oracle_plausibility(scene, small)


def test_grounded_oracle_rejects_obstacle_overlap():
    side = 0.6 * 64
    box = PlacementBox(left=12.8, top=63 - side, width=side, height=side)
    blocked = hand_scene("grounded", obstacles=[PlacementBox(left=20, top=40, width=20, height=20)])
    assert not oracle_plausibility(blocked, box)
    aside = hand_scene("grounded", obstacles=[PlacementBox(left=56, top=30, width=6, height=6)])
    assert oracle_plausibility(aside, box)


def test_sky_free_flyer_is_infeasible():
    scene = hand_scene("flyer", horizon_row=0)
    assert not oracle_mask(scene, ScaleGrid()).any()
    assert plausible_fraction(scene, ScaleGrid()) == 0.0
    with pytest.raises(OracleInfeasible):
        sample_gt_placement(scene, ScaleGrid(), seed=0)


def test_oracle_mask_matches_pointwise_oracle(small_scenes):
    for scene in small_scenes[:3]:
        mask = oracle_mask(scene, SMALL_GRID)
        assert mask.shape == (32, 32, 4) and mask.dtype == bool
        for y in range(32):
            for x in range(32):
                for z in range(4):
                    box = box_from_index(GridIndex(x=x, y=y, z=z), SMALL_GRID, scene.dims, scene.aspect)
                    assert mask[y, x, z] == oracle_plausibility(scene, box), (scene.seed, x, y, z)


def test_oracle_heatmap_is_binary(scenes64, grid):
    H = oracle_heatmap(scenes64[0], grid)
    assert set(np.unique(H.data)) <= {0.0, 1.0}
    assert 0.0 < plausible_fraction(scenes64[0], grid) < 1.0


def test_generate_scene_is_deterministic():
    a, b = generate_scene(42), generate_scene(42)
    np.testing.assert_array_equal(a.bg, b.bg)
    np.testing.assert_array_equal(a.obj, b.obj)
    assert a.meta() == b.meta()
    c = generate_scene(43)
    assert not np.array_equal(a.bg, c.bg) or a.meta() != c.meta()


def test_generated_scenes_are_consistent(scenes64, grid):
    for scene in scenes64:
        assert 0.30 <= scene.horizon_frac <= 0.50
        assert scene.horizon_row == int(np.floor(scene.horizon_frac * 64 + 0.5))
        assert scene.bg.shape == (64, 64, 3) and scene.bg.dtype == np.uint8
        assert max(scene.obj.shape[:2]) == 32
        assert scene.gt.box == box_from_index(scene.gt.idx, grid, scene.dims, scene.aspect)
        assert oracle_plausibility(scene, scene.gt.box)
        for obs in scene.obstacles:
            assert obs.top > scene.horizon_row


def test_gt_placements_vary_with_seed():
    scenes = generate_dataset(0, 20, dims=ImageDims.square(32), grid=SMALL_GRID)
    assert len({(s.gt.idx.x, s.gt.idx.y, s.gt.idx.z) for s in scenes}) >= 10
    assert {s.spec.category for s in scenes} == {"grounded", "flyer"}


def test_bimodal_layout_has_central_obstacle_and_two_sides():
    scene = generate_scene(7, layout="bimodal")
    assert scene.spec.category == "grounded"
    (obs,) = scene.obstacles
    assert obs.width == 64 // 3
    assert obs.left + obs.width / 2 == pytest.approx(32, abs=1)
    mask = oracle_mask(scene, ScaleGrid())
    assert mask[:, : int(obs.left)].any()
    assert mask[:, int(obs.right) + 1:].any()


def test_parallel_generation_matches_serial():
    kwargs = dict(dims=ImageDims.square(32), grid=SMALL_GRID)
    serial = generate_dataset(3, 3, **kwargs)
    parallel = generate_dataset(3, 3, workers=2, **kwargs)
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a.bg, b.bg)
        assert a.meta() == b.meta()


def test_dataset_round_trip(tmp_path, small_scenes):
    write_dataset(tmp_path / "a", small_scenes, SMALL_GRID)
    scenes, grid = read_dataset(tmp_path / "a")
    assert grid == SMALL_GRID
    assert len(scenes) == len(small_scenes)
    for original, loaded in zip(small_scenes, scenes):
        np.testing.assert_array_equal(original.bg, loaded.bg)
        np.testing.assert_array_equal(original.obj, loaded.obj)
        assert original.meta() == loaded.meta()

    write_dataset(tmp_path / "b", small_scenes, SMALL_GRID)
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes(), path.name


def test_dataset_count_mismatch(tmp_path, small_scenes):
    write_dataset(tmp_path, small_scenes[:4], SMALL_GRID)
    (tmp_path / "meta_000003.json").unlink()
    with pytest.raises(CorruptDataset):
        read_dataset(tmp_path)


def test_dataset_missing_manifest_and_bad_index(tmp_path, small_scenes):
    with pytest.raises(CorruptDataset):
        read_dataset(tmp_path)
    write_dataset(tmp_path, small_scenes[:2], SMALL_GRID)
    assert read_scene(tmp_path, 1).seed == small_scenes[1].seed
    with pytest.raises(CorruptDataset):
        read_scene(tmp_path, 2)


def rewrite_gt(directory, scene, idx):
    path = directory / "meta_000000.json"
    meta = json.loads(path.read_text())
    meta["gt"]["idx"] = idx.model_dump()
    meta["gt"]["box"] = box_from_index(idx, SMALL_GRID, scene.dims, scene.aspect).model_dump()
    path.write_text(json.dumps(meta))


def test_dataset_rejects_implausible_ground_truth(tmp_path, small_scenes):
    scene = small_scenes[0]
    write_dataset(tmp_path, [scene], SMALL_GRID)
    # the box hangs over the top-left corner
    rewrite_gt(tmp_path, scene, GridIndex(x=0, y=0, z=3))
    with pytest.raises(CorruptDataset, match="not plausible"):
        read_dataset(tmp_path)


def test_dataset_rejects_index_box_disagreement(tmp_path, small_scenes):
    scene = small_scenes[0]
    write_dataset(tmp_path, [scene], SMALL_GRID)
    path = tmp_path / "meta_000000.json"
    meta = json.loads(path.read_text())
    meta["gt"]["idx"]["z"] = (scene.gt.idx.z + 2) % SMALL_GRID.c
    path.write_text(json.dumps(meta))
    with pytest.raises(CorruptDataset, match="does not match its box"):
        read_scene(tmp_path, 0)


def test_rewriting_a_smaller_dataset_removes_old_samples(tmp_path, small_scenes):
    write_dataset(tmp_path, small_scenes, SMALL_GRID)
    write_dataset(tmp_path, small_scenes[:3], SMALL_GRID)
    scenes, _ = read_dataset(tmp_path)
    assert len(scenes) == 3
    assert sorted(p.name for p in tmp_path.glob("bg_*.ppm")) == [f"bg_{i:06d}.ppm" for i in range(3)]


def test_stored_seed_regenerates_images(tmp_path):
    dims = ImageDims.square(32)
    write_dataset(tmp_path, generate_dataset(21, 3, dims=dims, grid=SMALL_GRID), SMALL_GRID)
    for index in range(3):
        stored = read_scene(tmp_path, index)
        again = generate_scene(stored.seed, dims=dims, grid=SMALL_GRID, layout=stored.layout)
        assert again.bg.tobytes() == stored.bg.tobytes()
        assert again.obj.tobytes() == stored.obj.tobytes()
        assert again.meta() == stored.meta()


def test_gt_sampling_covers_every_plausible_cell():
    scene = generate_scene(4, dims=ImageDims.square(16), grid=SMALL_GRID)
    mask = oracle_mask(scene, SMALL_GRID)
    hits = np.zeros_like(mask)
    for seed in range(10_000):
        idx = sample_gt_placement(scene, SMALL_GRID, seed).idx
        hits[idx.y, idx.x, idx.z] = True
    assert not (hits & ~mask).any()
    np.testing.assert_array_equal(hits, mask)


def test_grounded_plausible_cells_have_plausible_neighbours():
    checked = 0
    for seed in range(40):
        scene = generate_scene(seed, dims=ImageDims.square(32), grid=SMALL_GRID)
        if scene.spec.category != "grounded":
            continue
        mask = oracle_mask(scene, SMALL_GRID)
        h, w, c = mask.shape
        for y, x, z in zip(*np.nonzero(mask)):
            box = box_from_index(GridIndex(x=x, y=y, z=z), SMALL_GRID, scene.dims, scene.aspect)
            near_obstacle = any(
                box.right + 1 >= o.left and box.left - 1 <= o.right and box.bottom + 1 >= o.top and box.top - 1 <= o.bottom
                for o in scene.obstacles
            )
            if near_obstacle:
                continue
            neighbours = [
                mask[y + dy, x + dx, z + dz]
                for dy in (-1, 0, 1)
                for dx in (-1, 0, 1)
                for dz in (-1, 0, 1)
                if (dy, dx, dz) != (0, 0, 0)
                and 0 <= y + dy < h and 0 <= x + dx < w and 0 <= z + dz < c
            ]
            assert any(neighbours), (seed, x, y, z)
            checked += 1
    assert checked > 0
