"""
Engine Errors
Exception hierarchy with stable machine-readable codes and CLI exit codes
"""

from typing import Any, Dict, Optional

USAGE_ERROR = 2
RUNTIME_ERROR = 3


class EngineError(Exception):
    """Base class for every error raised by the engine.

    Not a ValueError, so pydantic validators let it propagate unchanged.
    """

    code = "engine-error"
    exit_code = RUNTIME_ERROR

    def __init__(self, detail: str = "", **context: Any):
        super().__init__(detail or self.code)
        self.detail = detail
        self.context = context

    def to_response(self) -> Dict[str, Any]:
        return create_error_response(self.code, self.detail, self.context or None)


class InvalidRange(EngineError):
    code = "invalid-range"
    exit_code = USAGE_ERROR


class ShapeMismatch(EngineError):
    code = "shape-mismatch"


class IndexOutOfRange(EngineError):
    code = "index-out-of-range"


class NotDivisible(EngineError):
    code = "not-divisible"
    exit_code = USAGE_ERROR


class InvalidFactor(EngineError):
    code = "invalid-factor"
    exit_code = USAGE_ERROR


class OutOfBounds(EngineError):
    code = "out-of-bounds"


class CountMismatch(EngineError):
    code = "count-mismatch"


class UnknownConditioning(EngineError):
    code = "unknown-conditioning"
    exit_code = USAGE_ERROR


class SingularCovariance(EngineError):
    code = "singular-covariance"


class UnsupportedBackend(EngineError):
    code = "unsupported-backend"
    exit_code = USAGE_ERROR


class DivergedTraining(EngineError):
    code = "diverged-training"


class ModelUnavailable(EngineError):
    code = "model-unavailable"


class ScaleOutOfRange(EngineError):
    code = "scale-out-of-range"
    exit_code = USAGE_ERROR


class ModeMismatch(EngineError):
    code = "mode-mismatch"
    exit_code = USAGE_ERROR


class MissingCache(EngineError):
    code = "missing-cache"
    exit_code = USAGE_ERROR


class InputNotFound(EngineError):
    code = "input-not-found"
    exit_code = USAGE_ERROR


class UnknownBackend(EngineError):
    code = "unknown-backend"
    exit_code = USAGE_ERROR


class ContainerFormatError(EngineError):
    code = "container-format"


class ConfigError(EngineError):
    code = "config-error"
    exit_code = USAGE_ERROR


def create_error_response(error_code: str, detail: str = "", additional_info: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Create error response.

    Args:
        error_code: Machine-readable error code
        detail: Human-readable detail
        additional_info: Additional information

    Returns:
        Error response dictionary
    """
    response = {
        "success": False,
        "error": error_code,
        "detail": detail,
    }

    if additional_info:
        response.update({k: str(v) for k, v in additional_info.items()})

    return response
