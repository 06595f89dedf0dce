# semid/errors.py
"""
Exceptions shared by every layer.

The CLI maps ``ConfigError`` to exit code 2 and every other error to exit
code 1.
"""

from __future__ import annotations

from typing import Any, Dict, Optional


class SemidError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(SemidError, ValueError):
    """Invalid configuration file, unknown key or bad flag value."""


class DataError(SemidError, ValueError):
    """Loaded data violates an invariant (unknown item, duplicate ID, ...)."""


class FormatError(SemidError, ValueError):
    """Malformed artifact file. Names the file and, when known, the byte offset."""

    def __init__(self, path: str, msg: str, offset: Optional[int] = None):
        self.path = str(path)
        self.offset = offset
        where = f"{self.path}" if offset is None else f"{self.path} @ byte {offset}"
        super().__init__(f"{where}: {msg}")


class QuantizationError(SemidError, ValueError):
    """Quantizer precondition or capacity violation."""


class TrainingDiverged(SemidError, FloatingPointError):
    """Non-finite FAMAE loss. Carries the last parameter snapshot known to be finite."""

    def __init__(self, msg: str, window: Optional[int] = None,
                 last_good_state: Optional[Dict[str, Any]] = None, epoch: Optional[int] = None):
        super().__init__(msg)
        self.window = window
        self.last_good_state = last_good_state
        self.epoch = epoch
