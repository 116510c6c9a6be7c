from typing import Any, Dict


class InfoSelectError(Exception):
    """Base error. `code` is a short tag, `exit_code` is what the CLI returns."""

    exit_code = 1
    default_code = "internal_error"

    def __init__(self, message: str, code: str = None, **extra: Any):
        super().__init__(message)
        self.message = message
        self.code = code or self.default_code
        self.extra = extra

    def detail(self) -> Dict[str, Any]:
        detail = {"code": self.code, "message": self.message}
        detail.update(self.extra)
        return detail


class ConfigError(InfoSelectError, ValueError):
    exit_code = 2
    default_code = "bad_config"


class DegenerateGeometryError(InfoSelectError):
    exit_code = 2
    default_code = "no_triangulable_landmark"


class CapExceededError(InfoSelectError):
    exit_code = 3
    default_code = "cap_exceeded"


class BoundInapplicableError(InfoSelectError):
    exit_code = 4
    default_code = "bound_inapplicable"


class NumericalError(InfoSelectError):
    exit_code = 1
    default_code = "numerical_failure"
