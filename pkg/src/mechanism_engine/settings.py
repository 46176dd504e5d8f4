"""
Process-level settings read from the environment
"""

import logging
import os

logger = logging.getLogger(__name__)

THREADS_ENV = "MENUCONNECT_THREADS"


def max_workers() -> int:
    """Worker cap for data-parallel evaluation (MENUCONNECT_THREADS, default: CPU count)."""
    default = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV}={raw!r} (not an integer)")
        return default
    return max(1, value)
