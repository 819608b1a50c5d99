"""
Logging utilities for training and evaluation runs.
"""

from .logger import (
    ElasticsearchHandler,
    StructuredJSONFormatter,
    StructuredLogger,
    get_logger,
    get_structured_logger,
    log_debug,
    log_error,
    log_info,
    log_warning,
    setup_logger,
)

__all__ = [
    "setup_logger",
    "get_logger",
    "get_structured_logger",
    "StructuredLogger",
    "StructuredJSONFormatter",
    "ElasticsearchHandler",
    "log_info",
    "log_warning",
    "log_error",
    "log_debug",
]
