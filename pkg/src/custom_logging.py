import logging
import os
import sys
from datetime import UTC, datetime
from logging.handlers import RotatingFileHandler

import numpy as np
from json_log_formatter import JSONFormatter, _json_serializable

from src import config

_WORKBENCH_LOGGERS: set[str] = set()


# numpy scalars / arrays end up in `extra` all the time (losses, counters)
def _serializable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return _json_serializable(obj)


class CustomJSONFormatter(JSONFormatter):
    def to_json(self, record):
        try:
            return self.json_lib.dumps(record, ensure_ascii=False, default=_serializable)
        except (TypeError, ValueError, OverflowError):
            try:
                return self.json_lib.dumps(record)
            except (TypeError, ValueError, OverflowError):
                return "{}"

    def json_record(self, message, extra, record):
        result = {}
        if "time" not in extra:
            result["time"] = datetime.now(UTC)

        result["levelname"] = record.levelname
        result["logger"] = record.name
        result["message"] = message
        result.update(extra)

        if record.exc_info:
            result["exc_info"] = self.formatException(record.exc_info)

        return result


_json_formatter = CustomJSONFormatter()


def get_logger(name: str) -> logging.Logger:
    """Return a named logger with JSON file + stderr handlers.

    Handlers are added only once per logger name. Stdout is left to the CLI
    summaries, so the console handler writes to stderr.
    """
    logger = logging.getLogger(name)
    _WORKBENCH_LOGGERS.add(name)

    if logger.handlers:
        return logger

    logger.propagate = False
    logger.setLevel(config.LOG_LEVEL)

    # ── File handler with rotation ──
    os.makedirs(config.LOGS_DIR, exist_ok=True)
    file_handler = RotatingFileHandler(
        filename=config.LOG_FILE,
        encoding="utf-8",
        maxBytes=10 * 1024 * 1024,  # 10 MB per file
        backupCount=5,
    )
    file_handler.setFormatter(_json_formatter)
    logger.addHandler(file_handler)

    # ── Console handler ──
    stream_handler = logging.StreamHandler(stream=sys.stderr)
    stream_handler.setFormatter(_json_formatter)
    logger.addHandler(stream_handler)

    return logger


def set_level(level: str | int) -> None:
    """Change the level of every logger created through get_logger."""
    for name in _WORKBENCH_LOGGERS:
        logging.getLogger(name).setLevel(level)
