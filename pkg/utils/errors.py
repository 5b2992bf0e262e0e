# ============================================
# utils/errors.py
# ============================================

"""
Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration-type failures exit 2,
numeric failures exit 3.
"""

from typing import Optional


class MorphrlError(Exception):
    """Base class for every error raised on purpose by this package."""


class KeyValueSyntaxError(MorphrlError):
    """A `.morph` or config file does not follow the line grammar."""

    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}")


class MorphologyError(MorphrlError):
    """A morphology is well formed but violates a typed invariant."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        self.message = message
        super().__init__(f"{field_path}: {message}")


class ConfigError(MorphrlError):
    """A run configuration is unusable."""


class PolicyConfigError(ConfigError):
    """A policy cannot serve the requested robot (head index, joint count)."""


class NonFiniteError(MorphrlError):
    """NaN or Inf showed up in a value, gradient, loss, action or observation."""

    def __init__(self, message: str, node: Optional[str] = None):
        self.node = node
        text = message if node is None else f"{message} (at '{node}')"
        super().__init__(text)


class CheckpointError(MorphrlError):
    """A checkpoint file is not readable."""


class CheckpointShapeError(CheckpointError):
    """A checkpoint does not fit the observation layout or policy kind."""
