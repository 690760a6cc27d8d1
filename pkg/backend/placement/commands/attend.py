import argparse

import numpy as np
from PIL import Image

from ..errors import UsageError
from ..services.heatmap import channel_to_gray
from ..services.imaging import resize, write_pgm
from ..services.topnet import PlacementRegressor, attention_map
from .common import common_parent, emit, input_parent, load_model, load_pair, output_dir


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser(
        "attend",
        parents=[common_parent(), input_parent()],
        help="object-token attention over the background grid",
    )
    parser.add_argument("--layer", type=int, default=-1, help="transformer layer (default last)")
    parser.add_argument("--head", type=int, default=0)
    parser.add_argument("--out", help="directory for the attention graymap")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    model, cfg = load_model(args)
    if isinstance(model, PlacementRegressor):
        raise UsageError("attend needs the attention model, not the regression baseline")
    bg, obj, _ = load_pair(args)
    layer = args.layer if args.layer >= 0 else len(model.attention_modules) + args.layer
    amap = attention_map(model, bg, obj, layer, args.head)

    out = output_dir(args.out, "attend")
    size = model.cfg.input_size
    gray = resize(channel_to_gray(amap), size, size, resample=Image.Resampling.NEAREST)
    path = out / f"attention_l{layer}_h{args.head}.pgm"
    write_pgm(path, gray)

    peak = np.unravel_index(int(np.argmax(amap)), amap.shape)
    payload = {
        "layer": layer,
        "head": args.head,
        "map": amap.tolist(),
        "peak": [int(peak[1]), int(peak[0])],
        "graymap": str(path),
    }
    return emit(args, payload, f"attention peak at grid cell (x, y) = {payload['peak']}; wrote {path}\n")
