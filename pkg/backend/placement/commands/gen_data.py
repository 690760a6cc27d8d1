import argparse

import structlog

from ..errors import UsageError
from ..models.geometry import ImageDims
from ..services.evalsuite import chance_level
from ..services.synthworld import generate_dataset, write_dataset
from .common import common_parent, emit, load_run_config

logger = structlog.get_logger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("gen-data", parents=[common_parent()], help="generate a synthetic scene dataset")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n", type=int, required=True, help="number of scenes")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--layout", choices=["standard", "bimodal"], default="standard")
    parser.add_argument("--size", type=int, help="image side in pixels (default model.input_size)")
    parser.add_argument("--workers", type=int, default=1)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    dims = ImageDims.square(args.size or cfg.model.input_size)
    scenes = generate_dataset(args.seed, args.n, cfg.oracle, dims, cfg.grid, args.layout, max(1, args.workers))
    out = write_dataset(args.out, scenes, cfg.grid)
    payload = {
        "out": str(out),
        "count": len(scenes),
        "seed": args.seed,
        "layout": args.layout,
        "size": dims.width,
        "chance_level": chance_level(scenes, cfg.grid),
    }
    logger.info("gen_data.completed", **payload)
    return emit(args, payload)
