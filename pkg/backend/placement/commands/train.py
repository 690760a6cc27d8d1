import argparse
from pathlib import Path

import structlog

from ..config import settings
from ..errors import UsageError
from ..models.report import EvalReport
from ..services.evalsuite import render_tables
from ..services.synthworld import read_dataset
from ..services.trainer import train
from .common import common_parent, emit, load_run_config, require_path

logger = structlog.get_logger(__name__)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("train", parents=[common_parent()], help="train a placement model")
    parser.add_argument("--dataset", help="training dataset directory (default paths.dataset)")
    parser.add_argument("--eval-dataset", help="held-out dataset evaluated every train.eval_every steps")
    parser.add_argument("--checkpoint", help="checkpoint directory to write (and resume from)")
    parser.add_argument("--resume", action="store_true", help="continue from the checkpoint if present")
    parser.add_argument("--steps", type=int, help="train.total_steps")
    parser.add_argument("--seed", type=int, help="train.seed")
    parser.add_argument("--loss", choices=["sparse_contrastive", "binary", "gaussian", "regression"], help="train.loss.kind")
    parser.add_argument("--variant", choices=["full", "local_concat", "global_only"], help="train.variant")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    cfg = load_run_config(
        args,
        {
            "train.total_steps": args.steps,
            "train.seed": args.seed,
            "train.loss.kind": args.loss,
            "train.variant": args.variant,
        },
    )
    dataset = require_path(args.dataset or cfg.paths.dataset, "--dataset")
    scenes, grid = read_dataset(dataset)
    if grid != cfg.grid:
        raise UsageError("dataset scale grid differs from the configured grid", detail={"dataset": grid.values})
    eval_scenes = None
    eval_path = args.eval_dataset or cfg.paths.eval_dataset
    if eval_path:
        eval_scenes, _ = read_dataset(require_path(eval_path, "--eval-dataset"))

    checkpoint = Path(args.checkpoint or cfg.paths.checkpoint or Path(settings.default_output_dir) / "checkpoint")
    result = train(cfg, scenes, eval_scenes, checkpoint_dir=checkpoint, resume=args.resume)

    payload = {
        "checkpoint": str(checkpoint),
        "step": result.step,
        "final_loss": result.losses[-1] if result.losses else None,
    }
    text = f"trained to step {result.step}; checkpoint at {checkpoint}\n"
    last = result.progress[-1] if result.progress else {}
    if "metrics" in last:
        payload["metrics"] = last["metrics"]
        text += "\n" + render_tables(EvalReport.model_validate(last["metrics"]))
    return emit(args, payload, text)
