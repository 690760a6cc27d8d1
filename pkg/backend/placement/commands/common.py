"""Helpers shared by the subcommands: config loading, inputs and output."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from ..config import RunConfig
from ..errors import UsageError
from ..models.scene import Scene
from ..services.imaging import read_rgb
from ..services.synthworld import read_scene
from ..services.trainer import load_checkpoint, restore_model


def common_parent() -> argparse.ArgumentParser:
    """Flags every subcommand accepts."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="run config JSON file")
    parent.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key, e.g. train.batch_size=8 (repeatable)",
    )
    parent.add_argument("--json", action="store_true", help="print machine-readable JSON to stdout")
    return parent


def input_parent() -> argparse.ArgumentParser:
    """Flags selecting one background/object pair."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--checkpoint", required=True, help="checkpoint directory")
    parent.add_argument("--bg", help="background PPM")
    parent.add_argument("--obj", help="object PPM on white")
    parent.add_argument("--dataset", help="dataset directory (with --index)")
    parent.add_argument("--index", type=int, default=0, help="scene index in --dataset")
    return parent


def load_run_config(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> RunConfig:
    """--config file, then --set overrides, then flag-derived overrides, validated together."""
    overrides = list(args.overrides)
    for key, value in (extra or {}).items():
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    try:
        return RunConfig.load(args.config).with_overrides(overrides)
    except FileNotFoundError as e:
        raise UsageError(f"config file not found: {e.filename}")
    except ValidationError as e:
        raise UsageError("invalid configuration", detail={"errors": e.errors(include_url=False, include_context=False)})
    except ValueError as e:
        raise UsageError(str(e))


def require_path(path: Optional[str], what: str) -> Path:
    if not path:
        raise UsageError(f"{what} is required")
    resolved = Path(path)
    if not resolved.exists():
        raise UsageError(f"{what} does not exist", detail={"path": str(resolved)})
    return resolved


def load_model(args: argparse.Namespace):
    ckpt = load_checkpoint(require_path(args.checkpoint, "--checkpoint"))
    return restore_model(ckpt), ckpt.config


def load_pair(args: argparse.Namespace) -> Tuple[np.ndarray, np.ndarray, Optional[Scene]]:
    """(background, object, scene) from --dataset/--index or from --bg/--obj."""
    if args.dataset:
        scene = read_scene(require_path(args.dataset, "--dataset"), args.index)
        return scene.bg, scene.obj, scene
    if not (args.bg and args.obj):
        raise UsageError("give either --dataset or both --bg and --obj")
    return read_rgb(require_path(args.bg, "--bg")), read_rgb(require_path(args.obj, "--obj")), None


def object_aspect(obj: np.ndarray, scene: Optional[Scene]) -> float:
    if scene is not None:
        return scene.aspect
    return float(obj.shape[1]) / float(obj.shape[0])


def output_dir(path: Optional[str], fallback: str) -> Path:
    out = Path(path or fallback)
    out.mkdir(parents=True, exist_ok=True)
    return out


def emit(args: argparse.Namespace, payload: Dict[str, Any], text: Optional[str] = None) -> int:
    if args.json:
        sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text if text is not None else json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def parse_pair(raw: str, what: str) -> Tuple[int, int]:
    try:
        a, b = (int(v) for v in raw.split(","))
    except ValueError:
        raise UsageError(f"{what} expects two integers like 12,30", detail={"value": raw})
    return a, b
