"""
Logging configuration and utilities.
"""

import inspect
import json
import logging
import socket
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from latent_restoration.config import Config

try:
    from elasticsearch import Elasticsearch

    ELASTICSEARCH_AVAILABLE = True
except ImportError:
    ELASTICSEARCH_AVAILABLE = False


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


class StructuredJSONFormatter(logging.Formatter):
    """
    Formatter that outputs one JSON document per line when the message carries
    structured fields, and the plain text format otherwise.
    """

    def format(self, record):
        message = record.getMessage()
        if message.strip().startswith("{"):
            try:
                parsed = json.loads(message)
                log_entry = {
                    "severity": record.levelname,
                    "message": parsed.get("message", str(message)),
                    "timestamp": _utc_now(),
                    "service": getattr(Config, "SERVICE_NAME", record.name),
                    "logger_name": record.name,
                }
                for key, value in parsed.items():
                    if key != "message":
                        log_entry[key] = value
                if record.exc_info:
                    log_entry["exception"] = self.formatException(record.exc_info)
                return json.dumps(log_entry)
            except (json.JSONDecodeError, ValueError, TypeError, AttributeError):
                pass

        return super().format(record)


class ElasticsearchHandler(logging.Handler):
    """Handler that indexes log records into Elasticsearch."""

    def __init__(self, es_client, index_pattern: str = "latent-restoration-{date}"):
        super().__init__()
        self.es_client = es_client
        self.index_pattern = index_pattern
        self.hostname = socket.gethostname()
        self._processing = False  # Flag to prevent recursion

    def build_document(self, record: logging.LogRecord) -> Dict[str, Any]:
        """Turn a record into the document stored in the index."""
        raw_message = record.getMessage()
        doc: Dict[str, Any] = {}
        if raw_message.strip().startswith("{"):
            try:
                parsed = json.loads(raw_message)
                if isinstance(parsed, dict):
                    doc = dict(parsed)
            except (json.JSONDecodeError, ValueError, TypeError):
                pass
        if not doc:
            doc = {"message": raw_message}

        doc.setdefault("timestamp", _utc_now())
        doc.setdefault("level", record.levelname)
        doc.setdefault("severity", record.levelname)
        doc["service"] = doc.get("service_name") or Config.SERVICE_NAME or record.name
        doc.setdefault("logger_name", record.name)
        doc["hostname"] = self.hostname
        return doc

    def emit(self, record):
        """Emit a log record to Elasticsearch."""
        if self._processing:
            return

        # The transport library logs internally; indexing those would loop forever
        if record.name.startswith("elastic_transport") or record.name.startswith(
            "elasticsearch"
        ):
            return

        self._processing = True
        try:
            date_str = datetime.now(timezone.utc).strftime("%Y.%m.%d")
            index_name = self.index_pattern.format(date=date_str)
            doc = self.build_document(record)
            self.es_client.index(index=index_name, document=doc, request_timeout=1)
        except Exception as e:
            # Never break training because the log cluster is unavailable
            print(f"[ELASTICSEARCH_HANDLER] Error indexing log: {e}", file=sys.stderr)
        finally:
            self._processing = False


def _attach_elasticsearch_handler(root_logger: logging.Logger, level: str, formatter) -> None:
    url = Config.get_elasticsearch_url()
    has_handler = any(isinstance(h, ElasticsearchHandler) for h in root_logger.handlers)
    if not (ELASTICSEARCH_AVAILABLE and url and not has_handler):
        return

    try:
        es_client = Elasticsearch([url], request_timeout=2, max_retries=0)
        if es_client.ping(request_timeout=1):
            es_handler = ElasticsearchHandler(es_client)
            es_handler.setLevel(getattr(logging, level.upper()))
            es_handler.setFormatter(formatter)
            root_logger.addHandler(es_handler)
        else:
            print(f"[ELASTICSEARCH] Ping to {url} failed, handler not added", file=sys.stderr)
    except Exception as e:
        print(f"[ELASTICSEARCH] Logging not available: {e}", file=sys.stderr)


def setup_logger(
    service_name: Optional[str] = None, log_level: Optional[str] = None
) -> logging.Logger:
    """Setup and configure the root logger for a run."""

    name = service_name or Config.SERVICE_NAME
    level = log_level or Config.LOG_LEVEL

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level.upper()))

    # matplotlib and the ES transport are chatty at INFO
    for noisy_logger_name in ("matplotlib", "elastic_transport", "elasticsearch"):
        noisy_logger = logging.getLogger(noisy_logger_name)
        noisy_logger.setLevel(logging.WARNING)

    formatter = StructuredJSONFormatter(
        fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    has_console_handler = any(
        isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
        for h in root_logger.handlers
    )
    if not has_console_handler:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(getattr(logging, level.upper()))
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    _attach_elasticsearch_handler(root_logger, level, formatter)

    return logging.getLogger(name)


def get_logger(name: str) -> logging.Logger:
    """Get a module logger; handlers live on the root logger set up by setup_logger."""
    return logging.getLogger(name)


class StructuredLogger:
    """
    Wrapper around a logger that adds structured run fields (run_id, stage,
    epoch, step, metrics) so log lines can be filtered per run and stage.
    """

    def __init__(self, logger: logging.Logger):
        self.logger = logger

    def _format_structured_message(
        self,
        message: str,
        run_id: Optional[str] = None,
        stage: Optional[str] = None,
        **kwargs,
    ) -> str:
        """
        Format message with structured fields.

        Plain messages pass through unchanged; anything with a run_id, stage or
        extra fields becomes a JSON object the formatter expands.
        """
        formatted_message = message
        if run_id:
            formatted_message = f"[{run_id}] {message}"

        if run_id or stage or kwargs:
            structured_data: Dict[str, Any] = {"message": formatted_message}
            if run_id:
                structured_data["run_id"] = run_id
            if stage:
                structured_data["stage"] = stage
            structured_data["service_name"] = Config.SERVICE_NAME
            structured_data["environment"] = Config.ENVIRONMENT
            structured_data.update(kwargs)
            return json.dumps(structured_data, default=str)
        return formatted_message

    def debug(self, message: str, run_id: Optional[str] = None, **kwargs):
        """Log debug message with optional structured fields."""
        self.logger.debug(self._format_structured_message(message, run_id, **kwargs))

    def info(self, message: str, run_id: Optional[str] = None, **kwargs):
        """Log info message with optional structured fields."""
        self.logger.info(self._format_structured_message(message, run_id, **kwargs))

    def warning(self, message: str, run_id: Optional[str] = None, **kwargs):
        """Log warning message with optional structured fields."""
        self.logger.warning(self._format_structured_message(message, run_id, **kwargs))

    def error(
        self,
        message: str,
        run_id: Optional[str] = None,
        exc_info: bool = False,
        **kwargs,
    ):
        """Log error message with optional structured fields."""
        self.logger.error(
            self._format_structured_message(message, run_id, **kwargs), exc_info=exc_info
        )

    def __getattr__(self, name: str):
        """Delegate other attributes to the underlying logger."""
        return getattr(self.logger, name)


def get_structured_logger(name: str) -> StructuredLogger:
    """
    Get a structured logger.

    Usage:
        logger = get_structured_logger(__name__)
        logger.info("Epoch finished", run_id="run-7", stage="train", epoch=3)
    """
    return StructuredLogger(logging.getLogger(name))


def _caller_module(logger_name: Optional[str]) -> str:
    if logger_name is not None:
        return logger_name
    frame = inspect.currentframe()
    try:
        # two frames up: _caller_module <- log_* <- caller
        caller_frame = frame.f_back.f_back
        return caller_frame.f_globals.get("__name__", "root")
    finally:
        del frame


def log_info(
    message: str,
    run_id: str = "",
    logger_name: Optional[str] = None,
    stage: Optional[str] = None,
    **kwargs,
):
    """
    Log an info message with structured run fields.

    Args:
        message: The log message (should not embed run_id or metric values)
        run_id: Run identifier for tracing (can be empty string)
        logger_name: Optional logger name (defaults to caller's module name)
        stage: Optional experiment stage (synth, train-ae, train, restore, ...)
        **kwargs: Additional structured fields (epoch, step, loss terms, ...)
    """
    get_structured_logger(_caller_module(logger_name)).info(
        message, run_id=run_id, stage=stage, **kwargs
    )


def log_warning(
    message: str,
    run_id: str = "",
    logger_name: Optional[str] = None,
    stage: Optional[str] = None,
    **kwargs,
):
    """Log a warning message with structured run fields."""
    get_structured_logger(_caller_module(logger_name)).warning(
        message, run_id=run_id, stage=stage, **kwargs
    )


def log_error(
    message: str,
    run_id: str = "",
    logger_name: Optional[str] = None,
    stage: Optional[str] = None,
    exc_info: bool = False,
    **kwargs,
):
    """
    Log an error message with structured run fields.

    Args:
        message: The log message
        run_id: Run identifier for tracing (can be empty string)
        logger_name: Optional logger name (defaults to caller's module name)
        stage: Optional experiment stage
        exc_info: If True, include exception traceback information
        **kwargs: Additional structured fields
    """
    get_structured_logger(_caller_module(logger_name)).error(
        message, run_id=run_id, stage=stage, exc_info=exc_info, **kwargs
    )


def log_debug(
    message: str,
    run_id: str = "",
    logger_name: Optional[str] = None,
    stage: Optional[str] = None,
    **kwargs,
):
    """
    Log a debug message with structured run fields.

    Checks the logger level first so per-step debug calls cost nothing when
    DEBUG is disabled.
    """
    name = _caller_module(logger_name)
    if not logging.getLogger(name).isEnabledFor(logging.DEBUG):
        return
    get_structured_logger(name).debug(message, run_id=run_id, stage=stage, **kwargs)
