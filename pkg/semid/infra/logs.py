"""
JSON-lines logging for the command line.

Library modules only call ``logging.getLogger(__name__)``; the CLI installs
the handlers once per command through ``setup_logging``. Structured payloads
travel in ``extra={"data": {...}}`` and are merged into the record.
"""

from __future__ import annotations

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Optional

from semid.errors import ConfigError

ROOT_LOGGER = "semid"


class JsonLinesFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {
            "ts": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(timespec="milliseconds"),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        data = getattr(record, "data", None)
        if isinstance(data, dict):
            out.update(data)
        if record.exc_info:
            out["exc"] = self.formatException(record.exc_info)
        return json.dumps(out, ensure_ascii=False, default=str)


def setup_logging(level: str = "INFO", log_path: Optional[str] = None) -> logging.Logger:
    """(Re)configures the package logger: JSON lines on stderr and optionally a file."""
    logger = logging.getLogger(ROOT_LOGGER)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    try:
        logger.setLevel(level.upper())
    except ValueError as exc:
        raise ConfigError(f"unknown log level {level!r}") from exc
    fmt = JsonLinesFormatter()
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_path:
        handlers.append(logging.FileHandler(log_path, mode="a", encoding="utf-8"))
    for h in handlers:
        h.setFormatter(fmt)
        logger.addHandler(h)
    logger.propagate = False
    return logger
