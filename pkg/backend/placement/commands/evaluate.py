import argparse

from ..errors import UsageError
from ..services.evalsuite import render_tables
from ..services.synthworld import read_dataset
from ..services.trainer import evaluate_model
from .common import common_parent, emit, load_model, load_run_config, require_path


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("eval", parents=[common_parent()], help="evaluate a checkpoint on a dataset")
    parser.add_argument("--checkpoint", required=True, help="checkpoint directory")
    parser.add_argument("--dataset", help="dataset directory (default paths.eval_dataset)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    cli_cfg = load_run_config(args)
    model, cfg = load_model(args)
    scenes, grid = read_dataset(require_path(args.dataset or cli_cfg.paths.eval_dataset, "--dataset"))
    if grid != cfg.grid:
        raise UsageError("dataset scale grid differs from the checkpoint's grid", detail={"dataset": grid.values})
    report = evaluate_model(model, scenes, cfg)
    return emit(args, report.model_dump(mode="json"), render_tables(report))
