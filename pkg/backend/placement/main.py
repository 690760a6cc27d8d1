"""Command-line entry point: python -m backend.placement.main <command> ..."""

import argparse
import json
import sys
from typing import List, Optional

import structlog
from pydantic import ValidationError

from .commands import attend, evaluate, gen_data, predict, render, slice, train
from .config import settings
from .errors import PlacementError, UsageError
from .logs import configure_logging
from .services.trainer import configure_torch

logger = structlog.get_logger(__name__)

COMMANDS = (gen_data, train, evaluate, predict, slice, render, attend)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class PlacementArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting so dispatch owns the exit code."""

    def error(self, message: str):
        raise UsageError(message, detail={"usage": self.format_usage().strip()})


def build_parser() -> PlacementArgumentParser:
    parser = PlacementArgumentParser(
        prog="placement",
        description=f"{settings.app_name} {settings.app_version}: dense object placement heatmaps",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for command in COMMANDS:
        command.add_parser(subparsers)
    return parser


def _report_error(error: PlacementError, as_json: bool, usage: bool) -> None:
    logger.error("command.failed", error=type(error).__name__, message=error.message, **{"detail": error.detail})
    if as_json:
        sys.stdout.write(json.dumps(error.to_dict(), sort_keys=True, default=str) + "\n")
    if usage and "usage" in error.detail:
        sys.stderr.write(f"{error.detail['usage']}\nerror: {error.message}\n")
    else:
        sys.stderr.write(f"error: {error.message}\n")


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on usage errors, 2 on runtime errors."""
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--json" in argv
    configure_logging(settings.log_level, settings.log_json)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_torch()
        return args.handler(args)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except UsageError as e:
        _report_error(e, as_json, usage=True)
        return EXIT_USAGE
    except ValidationError as e:
        error = UsageError("invalid input", detail={"errors": e.errors(include_url=False, include_context=False)})
        _report_error(error, as_json, usage=False)
        return EXIT_USAGE
    except PlacementError as e:
        _report_error(e, as_json, usage=False)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception("command.failed", error=type(e).__name__)
        if as_json:
            payload = {"error": type(e).__name__, "message": str(e), "detail": {}}
            sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
        sys.stderr.write(f"error: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(dispatch())
