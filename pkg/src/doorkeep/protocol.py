"""Framed wire protocol between the door unit, controller, and notifier.

Frames are a 4-byte big-endian length prefix followed by that many bytes
of UTF-8 JSON. Messages carry a protocol version, a type from a fixed
vocabulary, the sender role, an optional session id, and a type-specific
payload. The controller is the only party allowed to emit UNLOCK_EVENT,
and the door unit the only one allowed to upload captures; receivers
enforce that from the declared role.

Image and audio payloads travel as base64 strings inside the JSON
payload; images are XOR-encrypted before base64.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass, field
from typing import Optional

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
HEADER_LEN = 4

MESSAGE_TYPES = frozenset(
    {
        "HELLO",
        "SESSION_START",
        "CAPTURE_UPLOAD",
        "AUTH_RESULT",
        "CODE_CHALLENGE",
        "CODE_SUBMIT",
        "CODE_RESULT",
        "UNLOCK_EVENT",
        "GUEST_AUDIO",
        "GUEST_MATCH",
        "GUEST_CONFIRM",
        "GUEST_RESULT",
        "DELIVERY",
        "NOTIFY",
        "NOTIFY_ACK",
        "ERROR",
        # keepalive (not part of the flow vocabulary, but first-class wire types)
        "PING",
        "PONG",
    }
)

ROLES = frozenset({"door", "controller", "notifier"})

# message types each role may send; receivers reject anything else
SENDABLE = {
    "door": frozenset(
        {
            "HELLO",
            "SESSION_START",
            "CAPTURE_UPLOAD",
            "CODE_SUBMIT",
            "GUEST_AUDIO",
            "GUEST_CONFIRM",
            "DELIVERY",
            "ERROR",
            "PING",
            "PONG",
        }
    ),
    "controller": frozenset(
        {
            "HELLO",
            "AUTH_RESULT",
            "CODE_CHALLENGE",
            "CODE_RESULT",
            "UNLOCK_EVENT",
            "GUEST_MATCH",
            "GUEST_RESULT",
            "DELIVERY",
            "NOTIFY",
            "ERROR",
            "PING",
            "PONG",
        }
    ),
    "notifier": frozenset({"HELLO", "NOTIFY_ACK", "ERROR", "PING", "PONG"}),
}


class FrameTooLargeError(RuntimeError):
    """Frame length over the limit; the connection is beyond recovery."""


class SchemaError(ValueError):
    """Payload is not valid JSON or violates the message schema. The
    connection survives; the peer gets an ERROR message."""


class ConnectionClosed(ConnectionError):
    """Peer went away mid-stream."""


@dataclass(frozen=True)
class Message:
    type: str
    role: str
    session: Optional[str] = None
    payload: dict = field(default_factory=dict)
    v: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.v != PROTOCOL_VERSION:
            raise SchemaError(f"unsupported protocol version {self.v}")
        if self.type not in MESSAGE_TYPES:
            raise SchemaError(f"unknown message type {self.type!r}")
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r}")
        if self.type not in SENDABLE[self.role]:
            raise SchemaError(f"role {self.role!r} may not send {self.type}")
        if self.session is not None and not isinstance(self.session, str):
            raise SchemaError("session must be a string or null")
        if not isinstance(self.payload, dict):
            raise SchemaError("payload must be an object")

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "type": self.type,
            "role": self.role,
            "session": self.session,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Message":
        if not isinstance(doc, dict):
            raise SchemaError("message must be a JSON object")
        unknown = set(doc) - {"v", "type", "role", "session", "payload"}
        if unknown:
            raise SchemaError(f"unknown message fields {sorted(unknown)}")
        for key in ("v", "type", "role"):
            if key not in doc:
                raise SchemaError(f"missing message field {key!r}")
        if not isinstance(doc["v"], int):
            raise SchemaError("v must be an integer")
        if not isinstance(doc["type"], str) or not isinstance(doc["role"], str):
            raise SchemaError("type and role must be strings")
        return cls(
            type=doc["type"],
            role=doc["role"],
            session=doc.get("session"),
            payload=doc.get("payload", {}),
            v=doc["v"],
        )


def encode_frame(message: Message) -> bytes:
    """Canonical JSON bytes behind a 4-byte big-endian length prefix."""
    payload = json.dumps(
        message.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameTooLargeError(f"payload of {len(payload)} bytes exceeds {MAX_FRAME_BYTES}")
    return len(payload).to_bytes(HEADER_LEN, "big") + payload


def decode_frame(buffer: bytes) -> Optional[tuple[Message, bytes]]:
    """Consume exactly one frame from the head of `buffer`.

    Returns (message, remaining bytes), or None when the buffer does not
    yet hold a complete frame (nothing consumed). Raises
    FrameTooLargeError for an over-limit header and SchemaError for
    non-JSON or schema-violating payloads.
    """
    if len(buffer) < HEADER_LEN:
        return None
    length = int.from_bytes(buffer[:HEADER_LEN], "big")
    if length > MAX_FRAME_BYTES:
        raise FrameTooLargeError(f"declared frame of {length} bytes exceeds {MAX_FRAME_BYTES}")
    if len(buffer) < HEADER_LEN + length:
        return None
    raw = buffer[HEADER_LEN : HEADER_LEN + length]
    rest = buffer[HEADER_LEN + length :]
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"frame payload is not valid JSON: {exc}") from exc
    return Message.from_dict(doc), rest


class FrameConnection:
    """Blocking frame I/O over one socket: a single reader, writes
    serialized by a lock. Closing is idempotent."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buffer = b""
        self._write_lock = threading.Lock()
        self._closed = False

    def send(self, message: Message) -> None:
        frame = encode_frame(message)
        with self._write_lock:
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise ConnectionClosed(str(exc)) from exc

    def recv_message(self, timeout: Optional[float] = None) -> Message:
        """Next complete message; blocks up to `timeout` (None = forever).
        Raises ConnectionClosed on EOF and socket.timeout on expiry. A
        schema-violating frame is dropped (the length header still frames
        it) so the stream resyncs on the next frame boundary."""
        self._sock.settimeout(timeout)
        while True:
            try:
                decoded = decode_frame(self._buffer)
            except SchemaError:
                length = int.from_bytes(self._buffer[:HEADER_LEN], "big")
                self._buffer = self._buffer[HEADER_LEN + length :]
                raise
            if decoded is not None:
                message, self._buffer = decoded
                return message
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                if isinstance(exc, socket.timeout):
                    raise
                raise ConnectionClosed(str(exc)) from exc
            if not chunk:
                raise ConnectionClosed("peer closed the connection")
            self._buffer += chunk

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    @property
    def closed(self) -> bool:
        return self._closed
