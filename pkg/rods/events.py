"""
Run Events

Compact JSON event lines and human status messages on stderr.
"""

from __future__ import annotations

import json
import os
from datetime import datetime, timezone
from typing import Any

import numpy as np
from rich.console import Console

_console = Console(stderr=True, highlight=False, soft_wrap=True)

_LEVELS = {"quiet": 0, "info": 1, "debug": 2}


def log_level() -> int:
    """Numeric verbosity from ROD_LOG_LEVEL (quiet | info | debug)."""
    return _LEVELS.get(os.environ.get("ROD_LOG_LEVEL", "info").lower(), 1)


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def log_event(event: str, debug: bool = False, **fields: Any):
    """Emit one JSON line with a timestamp and the given fields."""
    if log_level() < (2 if debug else 1):
        return
    entry = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "event": event,
        **fields,
    }
    _console.print(json.dumps(entry, separators=(",", ":"), default=_jsonable), markup=False)


def status(message: str, style: str = ""):
    """Human-readable progress line."""
    if log_level() < 1:
        return
    _console.print(message, style=style or None, markup=False)
