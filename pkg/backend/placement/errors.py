from typing import Any, Dict, Optional


class PlacementError(Exception):
    """Base error. `detail` carries diagnostics for logs and JSON output."""

    def __init__(self, message: str, detail: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.detail = detail or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, "detail": self.detail}


class UsageError(PlacementError):
    """Bad command line or configuration input."""


# geometry / heatmap
class EmptyClip(PlacementError):
    pass


class DegenerateHeatmap(PlacementError):
    pass


class CorruptHeatmap(PlacementError):
    pass


# loss / substrate
class ShapeMismatch(PlacementError):
    pass


class DimMismatch(PlacementError):
    pass


class NonFiniteValue(PlacementError):
    pass


class BadDim(PlacementError):
    pass


# network inputs
class BadInputSize(PlacementError):
    pass


class EmptyImage(PlacementError):
    pass


class CorruptImage(PlacementError):
    pass


class IndexOutOfRange(PlacementError):
    pass


# data
class OracleInfeasible(PlacementError):
    pass


class CorruptDataset(PlacementError):
    pass


class LengthMismatch(PlacementError):
    pass


# training
class NonFiniteLoss(PlacementError):
    pass


class CorruptCheckpoint(PlacementError):
    pass
