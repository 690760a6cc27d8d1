import argparse

import structlog

from ..models.heatmap import Heatmap3D
from ..services.heatmap import channel_to_gray, max_over_scales, montage, read_heatmap
from ..services.imaging import write_pgm
from .common import common_parent, emit, load_run_config, output_dir, require_path

logger = structlog.get_logger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("render", parents=[common_parent()], help="render a heatmap file as graymaps")
    parser.add_argument("--heatmap", required=True, help="TOPH heatmap file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--columns", type=int, default=4, help="montage columns")
    parser.set_defaults(handler=handle)


def _load(path, cfg) -> Heatmap3D:
    heatmap = read_heatmap(path)
    if heatmap.grid.c == cfg.grid.c:
        return Heatmap3D(data=heatmap.data, dims=heatmap.dims, grid=cfg.grid)
    return heatmap


def handle(args: argparse.Namespace) -> int:
    cfg = load_run_config(args)
    heatmap = _load(require_path(args.heatmap, "--heatmap"), cfg)
    out = output_dir(args.out, args.out)

    channels = []
    for z in range(heatmap.grid.c):
        path = out / f"channel_{z:02d}.pgm"
        write_pgm(path, channel_to_gray(heatmap.data[:, :, z]))
        channels.append(str(path))
    write_pgm(out / "montage.pgm", montage(heatmap, columns=max(1, args.columns)))
    write_pgm(out / "max_over_scales.pgm", channel_to_gray(max_over_scales(heatmap)))
    logger.info("render.completed", out=str(out), channels=len(channels))

    payload = {
        "channels": channels,
        "montage": str(out / "montage.pgm"),
        "max_over_scales": str(out / "max_over_scales.pgm"),
        "scales": list(heatmap.grid.values),
    }
    return emit(args, payload, f"wrote {len(channels)} channels, montage and max-over-scales to {out}\n")
