"""Interactive search: fix the location and pick a scale, or fix the scale and pick a location."""

import argparse

import numpy as np

from ..errors import UsageError
from ..models.geometry import GridIndex
from ..services.geometry import box_from_index
from ..services.heatmap import channel_to_gray, slice_fixed_location, slice_fixed_scale
from ..services.imaging import write_pgm
from ..services.topnet import PlacementRegressor, predict_heatmap
from .common import common_parent, emit, input_parent, load_model, load_pair, object_aspect, output_dir, parse_pair


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(
        "slice",
        parents=[common_parent(), input_parent()],
        help="best scale at a fixed location, or best location at a fixed scale",
    )
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--fix-location", metavar="X,Y", help="column and row of the box center")
    group.add_argument("--fix-scale", type=int, metavar="Z", help="scale channel index")
    parser.add_argument("--out", help="directory for the slice graymap (fixed scale only)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    model, cfg = load_model(args)
    if isinstance(model, PlacementRegressor):
        raise UsageError("slice needs a heatmap model, not the regression baseline")
    bg, obj, scene = load_pair(args)
    aspect = object_aspect(obj, scene)
    heatmap = predict_heatmap(model, bg, obj, cfg.grid)

    if args.fix_location is not None:
        x, y = parse_pair(args.fix_location, "--fix-location")
        scores, z = slice_fixed_location(heatmap, x, y)
        idx = GridIndex(x=x, y=y, z=z)
        payload = {"scores": scores.tolist(), "scale": heatmap.grid[z]}
    else:
        plane = slice_fixed_scale(heatmap, args.fix_scale)
        y, x = np.unravel_index(int(np.argmax(plane)), plane.shape)
        idx = GridIndex(x=int(x), y=int(y), z=args.fix_scale)
        payload = {"scale": heatmap.grid[args.fix_scale]}
        if args.out:
            path = output_dir(args.out, args.out) / f"slice_z{args.fix_scale:02d}.pgm"
            write_pgm(path, channel_to_gray(plane))
            payload["graymap"] = str(path)

    box = box_from_index(idx, heatmap.grid, heatmap.dims, aspect)
    payload.update({"index": list(idx.as_tuple()), "box": box.as_list()})
    text = f"index (x, y, z) = {idx.as_tuple()}  box = {[round(v, 2) for v in box.as_list()]}\n"
    return emit(args, payload, text)
