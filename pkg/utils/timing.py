"""Timing utilities shared across simulator components."""

from __future__ import annotations

import functools
import time
from typing import Callable, Optional, TypeVar

from config import get_settings
from utils.output import log

F = TypeVar("F", bound=Callable)


def measure_time(func_name: Optional[str] = None):
    """Decorator to log execution time when ``enable_timing`` is set."""

    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            if not get_settings().enable_timing:
                return func(*args, **kwargs)
            start_time = time.perf_counter()
            name = func_name or func.__name__
            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                execution_time = time.perf_counter() - start_time
                log("TIMING", f"{name} failed after {execution_time:.4f} seconds: {exc}")
                raise
            execution_time = time.perf_counter() - start_time
            log("TIMING", f"{name} took {execution_time:.4f} seconds")
            return result

        return wrapper  # type: ignore[return-value]

    return decorator
