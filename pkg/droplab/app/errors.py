"""Shared exception types for droplab.

Every error carries the process exit code the CLI maps it to:
0 success, 1 usage/config error, 2 data error, 3 internal invariant violation.
"""
from typing import Optional


class DropLabError(RuntimeError):
    exit_code = 3


class ConfigError(DropLabError, ValueError):
    """Invalid configuration or argument value."""
    exit_code = 1

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DataError(DropLabError):
    """Dataset, checkpoint or report file that cannot be read as expected."""
    exit_code = 2


class ShapeError(DropLabError, ValueError):
    """Tensor shape does not fit the layer it is fed into."""
    exit_code = 3

    def __init__(self, layer_index: int, message: str):
        self.layer_index = layer_index
        super().__init__(f"layer {layer_index}: {message}")


class InvariantError(DropLabError):
    exit_code = 3
