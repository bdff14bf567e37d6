"""Outdoor node: capture devices, controller client, and the kiosk gateway.

The door unit is a thin client on purpose: it holds no directory data,
no thresholds, and makes no access decisions. It captures on explicit
kiosk action, encrypts, uploads, and renders whatever the controller
answers. The kiosk itself is a browser talking JSON events over a
WebSocket; this module bridges those events to the wire protocol.

UI event vocabulary (the whole kiosk contract):
    from the UI:  pressEmployee, pressGuest, pressDelivery,
                  keypadSubmit, confirmYes, confirmNo, recordDone
    to the UI:    showMainMenu, promptCapture, promptCode, showWelcome,
                  showDenied, promptSpeak, askConfirm, showNotified,
                  showRetry, showError
"""

from __future__ import annotations

import asyncio
import base64
import itertools
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .clocks import Clock, WallClock
from .crypto import CipherKey, xor_transform
from .protocol import ConnectionClosed, FrameConnection, FrameTooLargeError, Message, SchemaError

log = logging.getLogger(__name__)

FROM_UI_EVENTS = frozenset(
    {
        "pressEmployee",
        "pressGuest",
        "pressDelivery",
        "keypadSubmit",
        "confirmYes",
        "confirmNo",
        "recordDone",
    }
)
TO_UI_EVENTS = frozenset(
    {
        "showMainMenu",
        "promptCapture",
        "promptCode",
        "showWelcome",
        "showDenied",
        "promptSpeak",
        "askConfirm",
        "showNotified",
        "showRetry",
        "showError",
    }
)


class DeviceError(RuntimeError):
    """Capture device unavailable or out of material."""


@dataclass
class FileBackedDevice:
    """Camera or microphone stand-in that cycles through files on disk in
    sorted order, deterministically."""

    kind: str  # "camera" | "microphone"
    paths: list[Path] = field(default_factory=list)
    _cursor: int = 0

    @classmethod
    def from_dir(cls, kind: str, directory: str | Path) -> "FileBackedDevice":
        paths = sorted(p for p in Path(directory).iterdir() if p.is_file())
        return cls(kind=kind, paths=paths)

    def capture(self) -> bytes:
        if not self.paths:
            raise DeviceError(f"{self.kind} has no source files")
        path = self.paths[self._cursor % len(self.paths)]
        self._cursor += 1
        try:
            return path.read_bytes()
        except OSError as exc:
            raise DeviceError(f"{self.kind} read failed: {exc}") from exc


def capture_image(device: FileBackedDevice) -> bytes:
    """Grab one frame. Callers must only invoke this on an explicit kiosk
    trigger; the device never free-runs."""
    return device.capture()


class DoorUnitClient:
    """Protocol client for the door role. Incoming controller messages go
    to `on_message` when given, otherwise queue up for `next_message`.
    Keepalive pings are answered internally."""

    def __init__(
        self,
        host: str,
        port: int,
        on_message: Optional[Callable[[Message], None]] = None,
        connect_timeout_s: float = 10.0,
    ):
        sock = socket.create_connection((host, port), timeout=connect_timeout_s)
        self.conn = FrameConnection(sock)
        self.conn.send(Message(type="HELLO", role="door", payload={"role": "door"}))
        self._on_message = on_message
        self._inbox: queue.Queue[Message] = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True, name="door-client")
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            try:
                message = self.conn.recv_message(timeout=1.0)
            except socket.timeout:
                continue
            except (ConnectionClosed, OSError):
                return
            except (SchemaError, FrameTooLargeError):
                continue
            if message.type == "PING":
                try:
                    self.conn.send(Message(type="PONG", role="door"))
                except ConnectionClosed:
                    return
                continue
            if message.type == "PONG":
                continue
            if self._on_message is not None:
                try:
                    self._on_message(message)
                except Exception:
                    log.exception("controller message handler failed")
            else:
                self._inbox.put(message)

    def next_message(self, timeout: float = 5.0) -> Message:
        return self._inbox.get(timeout=timeout)

    def send(self, message: Message) -> None:
        self.conn.send(message)

    def start_session(self, session_id: str, kind: str) -> None:
        self.send(
            Message(type="SESSION_START", role="door", session=session_id, payload={"kind": kind})
        )

    def upload_probe(
        self,
        session_id: str,
        image: bytes,
        key: CipherKey,
        capture_ms: Optional[int] = None,
    ) -> None:
        """Encrypt and upload one probe. Empty images are rejected here so
        no useless frame crosses the wire."""
        if not image:
            raise ValueError("refusing to upload an empty image")
        payload = {"imageB64": base64.b64encode(xor_transform(image, key)).decode("ascii")}
        if capture_ms is not None:
            payload["captureMs"] = capture_ms
        self.send(Message(type="CAPTURE_UPLOAD", role="door", session=session_id, payload=payload))

    def submit_code(self, session_id: str, code: str, entry_ms: Optional[int] = None) -> None:
        payload: dict = {"code": code}
        if entry_ms is not None:
            payload["entryMs"] = entry_ms
        self.send(Message(type="CODE_SUBMIT", role="door", session=session_id, payload=payload))

    def send_audio(self, session_id: str, audio: bytes) -> None:
        if not audio:
            raise ValueError("refusing to upload empty audio")
        self.send(
            Message(
                type="GUEST_AUDIO",
                role="door",
                session=session_id,
                payload={"audioB64": base64.b64encode(audio).decode("ascii")},
            )
        )

    def confirm(self, session_id: str, yes: bool) -> None:
        self.send(
            Message(
                type="GUEST_CONFIRM",
                role="door",
                session=session_id,
                payload={"answer": "yes" if yes else "no"},
            )
        )

    def delivery(self, session_id: str) -> None:
        self.send(Message(type="DELIVERY", role="door", session=session_id, payload={}))

    def report_error(self, session_id: Optional[str], reason: str) -> None:
        self.send(Message(type="ERROR", role="door", session=session_id, payload={"reason": reason}))

    def close(self) -> None:
        self.conn.close()


def connect_with_backoff(
    host: str,
    port: int,
    on_message: Optional[Callable[[Message], None]] = None,
    attempts: int = 8,
    base_delay_s: float = 0.5,
) -> DoorUnitClient:
    """Controller may come up after the door unit; retry with doubling
    delays before giving up."""
    delay = base_delay_s
    last_error: Exception = RuntimeError("no attempts made")
    for _ in range(attempts):
        try:
            return DoorUnitClient(host, port, on_message=on_message)
        except OSError as exc:
            last_error = exc
            time.sleep(delay)
            delay = min(delay * 2, 10.0)
    raise ConnectionError(f"controller unreachable at {host}:{port}: {last_error}")


@dataclass(frozen=True)
class DoorUnitConfig:
    controller_host: str
    controller_port: int
    cipher_key: CipherKey
    camera_dir: Optional[str] = None
    audio_dir: Optional[str] = None
    menu_delay_s: float = 3.0  # dwell on result screens before returning to the menu


class DoorUnit:
    """Session-side state machine of the outdoor node.

    Consumes kiosk events, talks to the controller, and emits UI events.
    All entry points are serialized by one lock: kiosk events and
    controller replies interleave but never race.
    """

    def __init__(
        self,
        config: DoorUnitConfig,
        camera: Optional[FileBackedDevice] = None,
        microphone: Optional[FileBackedDevice] = None,
        clock: Optional[Clock] = None,
    ):
        self.config = config
        self.camera = camera or (
            FileBackedDevice.from_dir("camera", config.camera_dir) if config.camera_dir else None
        )
        self.microphone = microphone or (
            FileBackedDevice.from_dir("microphone", config.audio_dir) if config.audio_dir else None
        )
        self.clock = clock or WallClock()
        self.ui_outbox: queue.Queue[dict] = queue.Queue()
        self.event_log: list[tuple[str, str]] = []  # (direction, event name)
        self.client: Optional[DoorUnitClient] = None
        self._lock = threading.RLock()
        self._session_seq = itertools.count(1)
        self._session_id: Optional[str] = None
        self._session_kind: Optional[str] = None
        self._prompt_code_at_ms: Optional[int] = None
        self._timers: list[threading.Timer] = []

    def connect(self) -> None:
        self.client = connect_with_backoff(
            self.config.controller_host,
            self.config.controller_port,
            on_message=self.on_controller_message,
        )

    def close(self) -> None:
        for timer in self._timers:
            timer.cancel()
        if self.client is not None:
            self.client.close()

    # -- UI side -------------------------------------------------------------

    def _emit(self, event_name: str, **payload) -> None:
        assert event_name in TO_UI_EVENTS
        self.event_log.append(("to_ui", event_name))
        self.ui_outbox.put({"direction": "ToUi", "name": event_name, "payload": payload})

    def _emit_later(self, delay_s: float, event_name: str, **payload) -> None:
        if delay_s <= 0:
            self._emit(event_name, **payload)
            return
        timer = threading.Timer(delay_s, lambda: self._emit(event_name, **payload))
        timer.daemon = True
        timer.start()
        self._timers.append(timer)

    def on_ui_connect(self) -> "queue.Queue[dict]":
        """A kiosk (re)connected: drop any events queued for a previous
        connection and restart from the main menu, so the physical screen
        can never wedge on a stale state. Returns the fresh outbox the new
        connection should drain."""
        with self._lock:
            self.ui_outbox = queue.Queue()
            self._emit("showMainMenu")
            return self.ui_outbox

    def on_ui_disconnect(self) -> None:
        """Kiosk dropped mid-session: abort the session fail-closed."""
        with self._lock:
            if self._session_id is not None and self.client is not None:
                self.client.report_error(self._session_id, "kiosk disconnected")
                self._session_id = None
                self._session_kind = None

    def on_ui_event(self, event: dict) -> None:
        name = event.get("name", "")
        payload = event.get("payload") or {}
        if name not in FROM_UI_EVENTS:
            self._emit("showError", reason=f"unknown UI event {name!r}")
            return
        with self._lock:
            self.event_log.append(("from_ui", name))
            if self.client is None:
                self._emit("showError", reason="controller link is down")
                return
            try:
                self._dispatch_ui(name, payload)
            except (ConnectionClosed, OSError) as exc:
                log.warning("controller link failed: %s", exc)
                self._emit("showError", reason="controller link lost")
                self._session_id = None

    def _dispatch_ui(self, name: str, payload: dict) -> None:
        if name == "pressEmployee":
            self._begin_session("employee")
            self._emit("promptCapture")
            self._capture_and_upload()
        elif name == "pressGuest":
            self._begin_session("guest")
            self._emit("promptSpeak")
        elif name == "pressDelivery":
            self._begin_session("delivery")
            self.client.delivery(self._session_id)
        elif name == "keypadSubmit":
            if self._session_kind != "employee" or self._session_id is None:
                self._emit("showError", reason="no code entry in progress")
                return
            entry_ms = None
            if self._prompt_code_at_ms is not None:
                entry_ms = max(0, self.clock.now_ms() - self._prompt_code_at_ms)
            self.client.submit_code(self._session_id, str(payload.get("code", "")), entry_ms)
        elif name == "recordDone":
            if self._session_kind != "guest" or self._session_id is None:
                self._emit("showError", reason="no guest session in progress")
                return
            if self.microphone is None:
                self._emit("showError", reason="microphone unavailable")
                return
            try:
                audio = self.microphone.capture()
            except DeviceError as exc:
                self._emit("showError", reason=str(exc))
                return
            self.client.send_audio(self._session_id, audio)
        elif name in ("confirmYes", "confirmNo"):
            if self._session_kind != "guest" or self._session_id is None:
                self._emit("showError", reason="no guest session in progress")
                return
            self.client.confirm(self._session_id, yes=name == "confirmYes")

    def _begin_session(self, kind: str) -> None:
        self._session_id = f"u{next(self._session_seq)}"
        self._session_kind = kind
        self.client.start_session(self._session_id, kind)

    def _capture_and_upload(self) -> None:
        if self.camera is None:
            self._emit("showError", reason="camera unavailable")
            return
        started = self.clock.now_ms()
        try:
            image = capture_image(self.camera)
        except DeviceError as exc:
            self._emit("showError", reason=str(exc))
            return
        capture_ms = max(0, self.clock.now_ms() - started)
        try:
            self.client.upload_probe(self._session_id, image, self.config.cipher_key, capture_ms)
        except ValueError as exc:
            self._emit("showError", reason=str(exc))

    # -- controller side ----------------------------------------------------

    def on_controller_message(self, message: Message) -> None:
        with self._lock:
            if message.session is not None and message.session != self._session_id:
                return  # stale reply from an already-abandoned session
            self._dispatch_controller(message)

    def _dispatch_controller(self, message: Message) -> None:
        mtype = message.type
        payload = message.payload
        delay = self.config.menu_delay_s
        if mtype == "CODE_CHALLENGE":
            self._prompt_code_at_ms = self.clock.now_ms()
            attempts_used = int(payload.get("attemptsUsed", 0))
            self._emit("promptCode", attemptsLeft=3 - attempts_used)
        elif mtype == "AUTH_RESULT":
            if not payload.get("accepted", False):
                self._end_session()
                self._emit("showDenied")
                self._emit_later(delay, "showMainMenu")
        elif mtype == "CODE_RESULT":
            result = payload.get("result")
            if result == "ok":
                self._end_session()
                self._emit("showWelcome", name=payload.get("employeeName", ""))
                self._emit_later(delay, "showMainMenu")
            elif result == "retry":
                self._prompt_code_at_ms = self.clock.now_ms()
                attempts_used = int(payload.get("attemptsUsed", 0))
                self._emit("promptCode", attemptsLeft=3 - attempts_used)
            else:  # locked_out
                self._end_session()
                self._emit("showMainMenu")
        elif mtype == "UNLOCK_EVENT":
            pass  # informational; the lock line is driven indoors
        elif mtype == "GUEST_MATCH":
            band = payload.get("band")
            if band == "confirm":
                self._emit("askConfirm", candidate=payload.get("candidateName", ""))
            else:
                self._emit("showRetry")
                self._emit_later(delay, "promptSpeak")
        elif mtype == "GUEST_RESULT":
            if payload.get("outcome") == "notified":
                self._end_session()
                self._emit("showNotified")
                self._emit_later(delay, "showMainMenu")
            else:  # ask_again
                self._emit("promptSpeak")
        elif mtype == "DELIVERY":
            if payload.get("outcome") == "notified":
                self._end_session()
                self._emit("showNotified")
                self._emit_later(delay, "showMainMenu")
        elif mtype == "ERROR":
            self._end_session()
            self._emit("showError", reason=payload.get("reason", "controller error"))
            self._emit_later(delay, "showMainMenu")

    def _end_session(self) -> None:
        self._session_id = None
        self._session_kind = None
        self._prompt_code_at_ms = None


def build_kiosk_app(unit: DoorUnit, static_dir: Optional[str | Path] = None):
    """FastAPI app exposing the kiosk WebSocket and (optionally) the built
    browser UI. Exactly one UI connection is served at a time; an extra
    connection is closed with a policy-violation code."""
    app = FastAPI(title="doorkeep kiosk gateway")
    state = {"active_ws": None}

    @app.websocket("/kiosk")
    async def kiosk_ws(ws: WebSocket):
        await ws.accept()
        if state["active_ws"] is not None:
            await ws.close(code=1008, reason="another kiosk is connected")
            return
        state["active_ws"] = ws
        loop = asyncio.get_running_loop()
        outbox = unit.on_ui_connect()

        def poll_outbox():
            # short timeout so a cancelled pump lets its thread exit instead
            # of stealing an event meant for the next connection
            try:
                return outbox.get(timeout=0.3)
            except queue.Empty:
                return None

        async def pump_outbox():
            while True:
                event = await loop.run_in_executor(None, poll_outbox)
                if event is not None:
                    await ws.send_json(event)

        sender = asyncio.create_task(pump_outbox())
        try:
            while True:
                event = await ws.receive_json()
                await loop.run_in_executor(None, unit.on_ui_event, event)
        except WebSocketDisconnect:
            unit.on_ui_disconnect()
        finally:
            sender.cancel()
            state["active_ws"] = None

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    else:

        @app.get("/")
        def index() -> HTMLResponse:
            return HTMLResponse(
                "<html><body><h1>doorkeep kiosk gateway</h1>"
                "<p>No built UI found. Connect a kiosk to the /kiosk WebSocket.</p>"
                "</body></html>"
            )

    return app
