import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from doorkeep.directory import EmployeeRecord
from doorkeep.notify import (
    DispatchError,
    Notification,
    RecordingSink,
    WebhookSink,
    send_channel,
    send_direct,
)

ANNA = EmployeeRecord(id="e1", full_name="Anna Lindberg", notify_handle="@anna")
NO_HANDLE = EmployeeRecord(id="e2", full_name="Bo Ek", notify_handle="")


class _StubHandler(BaseHTTPRequestHandler):
    status = 200
    received: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        type(self).received.append(body)
        self.send_response(type(self).status)
        self.end_headers()
        self.wfile.write(b"{}")

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.received = []
    _StubHandler.status = 200
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/hook", _StubHandler
    server.shutdown()


def test_recording_sink_records_direct():
    sink = RecordingSink()
    receipt = send_direct(sink, ANNA, "hello", now_ms=5)
    assert receipt.receipt_id == "r1"
    assert sink.directs() == [Notification("direct", "@anna", "hello", 5)]


def test_missing_handle_precondition():
    sink = RecordingSink()
    with pytest.raises(ValueError):
        send_direct(sink, NO_HANDLE, "hello")
    assert sink.sent == []


def test_channel_send():
    sink = RecordingSink()
    send_channel(sink, "#deliveries", "package!")
    assert sink.channels()[0].target == "#deliveries"


def test_unconfigured_channel_rejected():
    with pytest.raises(ValueError):
        send_channel(RecordingSink(), "", "text")


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        Notification("direct", "@anna", "", 0)


def test_receipts_distinct():
    sink = RecordingSink()
    r1 = send_direct(sink, ANNA, "one")
    r2 = send_direct(sink, ANNA, "two")
    assert r1.receipt_id != r2.receipt_id


def test_dump_jsonl(tmp_path):
    sink = RecordingSink()
    send_direct(sink, ANNA, "one", now_ms=1)
    send_channel(sink, "#d", "two", now_ms=2)
    out = tmp_path / "sent.jsonl"
    sink.dump_jsonl(out)
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert lines[0]["target"] == "@anna"
    assert lines[1]["targetKind"] == "channel"


def test_webhook_posts_json(stub_server):
    url, handler = stub_server
    sink = WebhookSink(url)
    receipt = send_direct(sink, ANNA, "your code is inside")
    assert receipt.target == "@anna"
    assert handler.received == [{"target": "@anna", "text": "your code is inside"}]


def test_webhook_500_surfaces_error(stub_server):
    url, handler = stub_server
    handler.status = 500
    sink = WebhookSink(url)
    with pytest.raises(DispatchError):
        send_channel(sink, "#deliveries", "hello")


def test_webhook_unreachable_surfaces_error():
    sink = WebhookSink("http://127.0.0.1:1/nothing", timeout_s=0.2)
    with pytest.raises(DispatchError):
        send_direct(sink, ANNA, "hello")
