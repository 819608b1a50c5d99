import json
import logging

from latent_restoration.config import Config
from latent_restoration.logging import ElasticsearchHandler, StructuredJSONFormatter, get_structured_logger


class _RecordingClient:
    def __init__(self):
        self.calls = []

    def index(self, index, document, request_timeout):
        self.calls.append((index, document))


def _record(message, name="latent_restoration.lcfm.trainer", level=logging.INFO):
    return logging.LogRecord(name, level, __file__, 1, message, None, None)


def test_structured_message_carries_run_fields():
    logger = get_structured_logger("latent_restoration.tests")
    text = logger._format_structured_message("Epoch finished", run_id="run-7", stage="train", epoch=3)
    data = json.loads(text)
    assert data["message"] == "[run-7] Epoch finished"
    assert data["run_id"] == "run-7" and data["stage"] == "train" and data["epoch"] == 3
    assert logger._format_structured_message("plain") == "plain"


def test_formatter_expands_json_messages():
    formatter = StructuredJSONFormatter(fmt="%(levelname)s %(message)s")
    out = json.loads(formatter.format(_record(json.dumps({"message": "step", "loss": 0.5}))))
    assert out["severity"] == "INFO" and out["loss"] == 0.5
    assert out["service"] == Config.SERVICE_NAME
    assert formatter.format(_record("plain text")) == "INFO plain text"


def test_elasticsearch_handler_indexes_documents():
    client = _RecordingClient()
    handler = ElasticsearchHandler(client)
    handler.emit(_record(json.dumps({"message": "step", "run_id": "r1"})))
    index, doc = client.calls[0]
    assert index.startswith("latent-restoration-")
    assert doc["run_id"] == "r1" and doc["level"] == "INFO" and "hostname" in doc


def test_elasticsearch_handler_skips_transport_records():
    client = _RecordingClient()
    handler = ElasticsearchHandler(client)
    handler.emit(_record("connection pool", name="elastic_transport.node"))
    assert client.calls == []
