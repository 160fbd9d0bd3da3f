from __future__ import annotations

import warnings
from typing import Any, Dict, Optional, Type


class SlowFastError(RuntimeError):
    """Base class for toolkit failures; ``details`` ends up in the serialized report."""

    kind = "error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.details: Dict[str, Any] = dict(details or {})

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind, "message": str(self)}
        payload.update({key: value for key, value in self.details.items() if key != "partial"})
        if "partial" in self.details:
            payload["partial"] = self.details["partial"]
        return payload


class ConfigurationError(SlowFastError):
    kind = "configuration"


class ModelError(SlowFastError):
    kind = "model"


class EvaluationError(SlowFastError):
    kind = "evaluation"


class UnsupportedDimensionError(SlowFastError):
    kind = "unsupported_dimension"


class BlowUpError(SlowFastError):
    kind = "blow_up"


class CapabilityError(SlowFastError):
    kind = "capability"


class ConditioningError(SlowFastError):
    kind = "conditioning"


class TruncationError(SlowFastError):
    kind = "truncation"


class UnderResolvedWarning(UserWarning):
    """Fast scale resolved by fewer steps than requested."""


class TruncationWarning(UserWarning):
    """Poisson integrand did not show a decaying tail inside the window."""


def warn_or_raise(
    message: str,
    category: Type[UserWarning],
    error: Type[SlowFastError],
    details: Optional[Dict[str, Any]] = None,
    stacklevel: int = 3,
) -> None:
    """Issues ``category``; when the active filter turns it into an exception, raises ``error`` instead."""
    try:
        warnings.warn(message, category, stacklevel=stacklevel)
    except category as exc:
        raise error(message, details=details) from exc
