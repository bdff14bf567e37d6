"""Notification dispatch: direct messages to employees and channel posts.

Two sinks ship with the repo: a recording sink for tests and replay, and
a webhook sink that POSTs {"target", "text"} as JSON to a configured
URL (a thin bridge service can forward that to the office chat tool).
Dispatch is single-attempt; a failure surfaces to the caller, which
keeps the door flows fail-closed.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass
from pathlib import Path

import requests

from . import protocol
from .directory import EmployeeRecord


class DispatchError(RuntimeError):
    """The sink could not deliver the message."""


@dataclass(frozen=True)
class Notification:
    target_kind: str  # "direct" | "channel"
    target: str
    text: str
    dispatched_at: int

    def __post_init__(self):
        if self.target_kind not in ("direct", "channel"):
            raise ValueError(f"bad target_kind {self.target_kind!r}")
        if not self.text:
            raise ValueError("notification text must be non-empty")


@dataclass(frozen=True)
class DeliveryReceipt:
    receipt_id: str
    target: str


class NotificationSink:
    """Dispatch backend. Must accept concurrent sends."""

    def dispatch(self, notification: Notification) -> DeliveryReceipt:
        raise NotImplementedError


class RecordingSink(NotificationSink):
    """In-memory sink for tests: every dispatch is recorded and queryable.
    Receipt ids are sequential, so runs with a fixed scenario are stable."""

    def __init__(self):
        self.sent: list[Notification] = []
        self._lock = threading.Lock()
        self._counter = 0

    def dispatch(self, notification: Notification) -> DeliveryReceipt:
        with self._lock:
            self._counter += 1
            self.sent.append(notification)
            return DeliveryReceipt(receipt_id=f"r{self._counter}", target=notification.target)

    def directs(self) -> list[Notification]:
        with self._lock:
            return [n for n in self.sent if n.target_kind == "direct"]

    def channels(self) -> list[Notification]:
        with self._lock:
            return [n for n in self.sent if n.target_kind == "channel"]

    def dump_jsonl(self, path: str | Path) -> None:
        with self._lock:
            lines = [
                json.dumps(
                    {
                        "targetKind": n.target_kind,
                        "target": n.target,
                        "text": n.text,
                        "dispatchedAt": n.dispatched_at,
                    },
                    sort_keys=True,
                )
                for n in self.sent
            ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


class WebhookSink(NotificationSink):
    """HTTP POST of {"target", "text"} to a webhook URL. One attempt only."""

    def __init__(self, url: str, timeout_s: float = 10.0):
        self.url = url
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._counter = 0

    def dispatch(self, notification: Notification) -> DeliveryReceipt:
        try:
            response = requests.post(
                self.url,
                json={"target": notification.target, "text": notification.text},
                timeout=self.timeout_s,
            )
            response.raise_for_status()
        except requests.RequestException as exc:
            raise DispatchError(f"webhook dispatch failed: {exc}") from exc
        with self._lock:
            self._counter += 1
            receipt_id = f"wh{self._counter}"
        return DeliveryReceipt(receipt_id=receipt_id, target=notification.target)


def send_direct(
    sink: NotificationSink, employee: EmployeeRecord, text: str, now_ms: int = 0
) -> DeliveryReceipt:
    """Direct message to one employee's configured handle."""
    if not employee.notify_handle:
        raise ValueError(f"employee {employee.id!r} has no notify handle")
    return sink.dispatch(
        Notification(target_kind="direct", target=employee.notify_handle, text=text, dispatched_at=now_ms)
    )


def send_channel(
    sink: NotificationSink, channel: str, text: str, now_ms: int = 0
) -> DeliveryReceipt:
    """Post to a shared channel (deliveries)."""
    if not channel:
        raise ValueError("channel must be configured")
    return sink.dispatch(
        Notification(target_kind="channel", target=channel, text=text, dispatched_at=now_ms)
    )


class NotifierClient:
    """The notifier node: connects to the controller as its second client,
    receives NOTIFY frames, pushes them through a local sink (webhook or
    recording), and acks each one back."""

    def __init__(self, host: str, port: int, sink: NotificationSink):
        self.sink = sink
        sock = socket.create_connection((host, port), timeout=10)
        self.conn = protocol.FrameConnection(sock)
        self.conn.send(
            protocol.Message(type="HELLO", role="notifier", payload={"role": "notifier"})
        )
        self._thread = threading.Thread(target=self._run, daemon=True, name="notifier-client")
        self._thread.start()

    def _run(self) -> None:
        while True:
            try:
                message = self.conn.recv_message(timeout=1.0)
            except socket.timeout:
                continue
            except (protocol.ConnectionClosed, OSError):
                return
            except (protocol.SchemaError, protocol.FrameTooLargeError):
                continue
            if message.type == "PING":
                try:
                    self.conn.send(protocol.Message(type="PONG", role="notifier"))
                except protocol.ConnectionClosed:
                    return
                continue
            if message.type != "NOTIFY":
                continue
            payload = message.payload
            try:
                receipt = self.sink.dispatch(
                    Notification(
                        target_kind=payload.get("targetKind", ""),
                        target=payload.get("target", ""),
                        text=payload.get("text", ""),
                        dispatched_at=0,
                    )
                )
                ack = {"notifyId": payload.get("notifyId"), "receiptId": receipt.receipt_id}
            except (DispatchError, ValueError):
                # no ack: the controller's pending dispatch will time out
                # and the flow fails closed
                continue
            try:
                self.conn.send(protocol.Message(type="NOTIFY_ACK", role="notifier", payload=ack))
            except protocol.ConnectionClosed:
                return

    def close(self) -> None:
        self.conn.close()
        self._thread.join(timeout=2)
