"""Controller-side TCP service.

The indoor node listens for exactly two kinds of clients: the door unit
and the notifier. Door messages drive the access flows; notifications
go out through the notifier connection and are matched against acks.
Unlock decisions never leave this process: a door unit claiming an
unlock is answered with an ERROR and nothing else happens.

A door disconnect mid-session terminates the session as an error with
the door locked. Idle connections are pinged; a peer that misses three
keepalives in a row is dropped.
"""

from __future__ import annotations

import base64
import binascii
import itertools
import logging
import socket
import threading
import time
from typing import Optional

from .flows import AccessController, Outcome, Phase, SessionBusyError, SessionKind, StepResult
from .notify import DeliveryReceipt, DispatchError, Notification, NotificationSink
from .protocol import (
    ConnectionClosed,
    FrameConnection,
    FrameTooLargeError,
    Message,
    SchemaError,
)

log = logging.getLogger(__name__)

DEFAULT_HEARTBEAT_INTERVAL_S = 15.0
MISSED_PINGS_LIMIT = 3
DEFAULT_ACK_TIMEOUT_S = 5.0


class RemoteNotifierSink(NotificationSink):
    """Notification sink backed by the connected notifier client: sends
    NOTIFY frames and blocks for the matching NOTIFY_ACK. With no notifier
    attached (or on timeout/disconnect) dispatch fails, which the flows
    treat as a fail-closed session error."""

    def __init__(self, ack_timeout_s: float = DEFAULT_ACK_TIMEOUT_S):
        self.ack_timeout_s = ack_timeout_s
        self._conn: Optional[FrameConnection] = None
        self._lock = threading.Lock()
        self._seq = itertools.count(1)
        self._pending: dict[str, dict] = {}

    def attach(self, conn: FrameConnection) -> None:
        with self._lock:
            self._conn = conn

    def detach(self) -> None:
        with self._lock:
            self._conn = None
            pending = list(self._pending.values())
        for entry in pending:
            entry["error"] = "notifier disconnected"
            entry["event"].set()

    def resolve_ack(self, notify_id: str, receipt_id: str) -> None:
        with self._lock:
            entry = self._pending.get(notify_id)
        if entry is not None:
            entry["receipt_id"] = receipt_id
            entry["event"].set()

    def dispatch(self, notification: Notification) -> DeliveryReceipt:
        with self._lock:
            conn = self._conn
            if conn is None:
                raise DispatchError("notifier client is not connected")
            notify_id = f"n{next(self._seq)}"
            entry = {"event": threading.Event(), "receipt_id": None, "error": None}
            self._pending[notify_id] = entry
        try:
            conn.send(
                Message(
                    type="NOTIFY",
                    role="controller",
                    payload={
                        "notifyId": notify_id,
                        "targetKind": notification.target_kind,
                        "target": notification.target,
                        "text": notification.text,
                    },
                )
            )
            if not entry["event"].wait(self.ack_timeout_s):
                raise DispatchError("notify ack timed out")
            if entry["error"]:
                raise DispatchError(entry["error"])
            return DeliveryReceipt(receipt_id=entry["receipt_id"], target=notification.target)
        except ConnectionClosed as exc:
            raise DispatchError(f"notifier connection lost: {exc}") from exc
        finally:
            with self._lock:
                self._pending.pop(notify_id, None)


class _ClientState:
    def __init__(self, conn: FrameConnection):
        self.conn = conn
        self.role: Optional[str] = None
        self.last_rx = time.monotonic()
        self.pings_unanswered = 0


class ControllerServer:
    """Accepts the door-unit and notifier clients and routes their traffic
    through an AccessController."""

    def __init__(
        self,
        controller: AccessController,
        sink: RemoteNotifierSink | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        heartbeat_interval_s: float = DEFAULT_HEARTBEAT_INTERVAL_S,
    ):
        self.controller = controller
        self.sink = sink
        self.host = host
        self.port = port
        self.heartbeat_interval_s = heartbeat_interval_s
        self._listener: Optional[socket.socket] = None
        self._clients: list[_ClientState] = []
        self._clients_lock = threading.Lock()
        self._door: Optional[_ClientState] = None
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> tuple[str, int]:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(8)
        listener.settimeout(0.25)  # lets the accept loop notice a stop request
        self._listener = listener
        self.host, self.port = listener.getsockname()
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True, name="ctl-accept")
        accept_thread.start()
        keepalive = threading.Thread(target=self._keepalive_loop, daemon=True, name="ctl-keepalive")
        keepalive.start()
        self._threads += [accept_thread, keepalive]
        log.info("controller listening on %s:%d", self.host, self.port)
        return self.host, self.port

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.conn.close()
        for thread in self._threads:
            thread.join(timeout=2)

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- connection handling -------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.settimeout(None)
            client = _ClientState(FrameConnection(sock))
            with self._clients_lock:
                self._clients.append(client)
            thread = threading.Thread(
                target=self._client_loop, args=(client,), daemon=True, name=f"ctl-client-{addr[1]}"
            )
            thread.start()
            self._threads.append(thread)

    def _client_loop(self, client: _ClientState) -> None:
        try:
            while not self._stop.is_set():
                try:
                    message = client.conn.recv_message(timeout=1.0)
                except socket.timeout:
                    continue
                except SchemaError as exc:
                    self._send_error(client, None, f"schema violation: {exc}")
                    continue
                except FrameTooLargeError:
                    log.warning("oversize frame from %s client; closing", client.role)
                    break
                client.last_rx = time.monotonic()
                client.pings_unanswered = 0
                self._handle(client, message)
        except ConnectionClosed:
            pass
        finally:
            self._drop_client(client)

    def _drop_client(self, client: _ClientState) -> None:
        client.conn.close()
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)
        if client.role == "notifier" and self.sink is not None:
            self.sink.detach()
        if client.role == "door":
            if self._door is client:
                self._door = None
            active = self.controller.active_session
            if active is not None and not active.terminal:
                self.controller.abort_session(active, "door unit disconnected")
                log.info("session %s aborted: door unit disconnected", active.session_id)

    def _keepalive_loop(self) -> None:
        while not self._stop.wait(min(0.25, self.heartbeat_interval_s / 3)):
            now = time.monotonic()
            with self._clients_lock:
                clients = list(self._clients)
            for client in clients:
                if client.role is None:
                    continue
                idle = now - client.last_rx
                if idle < self.heartbeat_interval_s * (client.pings_unanswered + 1):
                    continue
                if client.pings_unanswered >= MISSED_PINGS_LIMIT:
                    log.warning("%s client missed %d pings; dropping", client.role, MISSED_PINGS_LIMIT)
                    client.conn.close()
                    continue
                try:
                    client.conn.send(Message(type="PING", role="controller"))
                    client.pings_unanswered += 1
                except ConnectionClosed:
                    client.conn.close()

    # -- message routing -------------------------------------------------------

    def _send(self, client: _ClientState, message: Message) -> None:
        try:
            client.conn.send(message)
        except ConnectionClosed:
            pass

    def _send_error(self, client: _ClientState, session: Optional[str], reason: str) -> None:
        self._send(
            client, Message(type="ERROR", role="controller", session=session, payload={"reason": reason})
        )

    def _handle(self, client: _ClientState, message: Message) -> None:
        if message.type == "PING":
            self._send(client, Message(type="PONG", role="controller"))
            return
        if message.type == "PONG":
            return
        if message.type == "HELLO":
            self._handle_hello(client, message)
            return
        if client.role is None:
            self._send_error(client, message.session, "HELLO required first")
            return
        if message.role != client.role:
            self._send_error(client, message.session, "message role does not match connection role")
            return
        if client.role == "notifier":
            if message.type == "NOTIFY_ACK" and self.sink is not None:
                payload = message.payload
                self.sink.resolve_ack(str(payload.get("notifyId")), str(payload.get("receiptId")))
            elif message.type == "ERROR":
                log.warning("notifier reported: %s", message.payload.get("reason"))
            else:
                self._send_error(client, message.session, f"unexpected {message.type} from notifier")
            return
        self._handle_door_message(client, message)

    def _handle_hello(self, client: _ClientState, message: Message) -> None:
        role = message.payload.get("role", message.role)
        if role not in ("door", "notifier"):
            self._send_error(client, None, f"unsupported client role {role!r}")
            client.conn.close()
            return
        if role == "door":
            if self._door is not None and self._door is not client:
                self._send_error(client, None, "a door unit is already connected")
                client.conn.close()
                return
            self._door = client
        if role == "notifier":
            if self.sink is not None:
                self.sink.attach(client.conn)
        client.role = role
        log.info("%s client connected", role)

    def _handle_door_message(self, client: _ClientState, message: Message) -> None:
        handler = {
            "SESSION_START": self._on_session_start,
            "CAPTURE_UPLOAD": self._on_capture_upload,
            "CODE_SUBMIT": self._on_code_submit,
            "GUEST_AUDIO": self._on_guest_audio,
            "GUEST_CONFIRM": self._on_guest_confirm,
            "DELIVERY": self._on_delivery,
            "ERROR": self._on_door_error,
        }.get(message.type)
        if handler is None:
            # schema-valid but not something the controller accepts inbound
            # (e.g. a spoofed UNLOCK_EVENT crafted on the wire)
            self._send_error(client, message.session, f"{message.type} is not accepted from the door unit")
            return
        handler(client, message)

    def _active_session_for(self, client: _ClientState, message: Message):
        session = self.controller.active_session
        if session is None or session.terminal or session.session_id != message.session:
            self._send_error(client, message.session, "no active session with that id")
            return None
        return session

    def _on_session_start(self, client: _ClientState, message: Message) -> None:
        kind_name = message.payload.get("kind", "")
        try:
            kind = SessionKind(kind_name)
        except ValueError:
            self._send_error(client, message.session, f"unknown session kind {kind_name!r}")
            return
        if not message.session:
            self._send_error(client, None, "SESSION_START requires a session id")
            return
        try:
            self.controller.start_session(kind, session_id=message.session)
        except SessionBusyError as exc:
            self._send_error(client, message.session, str(exc))

    def _on_capture_upload(self, client: _ClientState, message: Message) -> None:
        session = self._active_session_for(client, message)
        if session is None:
            return
        try:
            encrypted = base64.b64decode(message.payload.get("imageB64", ""), validate=True)
        except (binascii.Error, ValueError):
            self._send_error(client, message.session, "imageB64 is not valid base64")
            return
        capture_ms = message.payload.get("captureMs")
        if isinstance(capture_ms, int) and capture_ms >= 0:
            self.controller.record_phase(session, Phase.CAPTURE, capture_ms)
        result = self.controller.handle_capture(session, encrypted)
        sid = session.session_id
        if result.outcome is Outcome.CHALLENGE_ISSUED:
            self._send(
                client,
                Message(
                    type="CODE_CHALLENGE",
                    role="controller",
                    session=sid,
                    payload={
                        "employeeId": result.employee_id,
                        "employeeName": result.employee_name,
                        "attemptsUsed": result.attempts_used,
                    },
                ),
            )
        elif result.outcome is Outcome.DENIED:
            self._send(
                client,
                Message(
                    type="AUTH_RESULT",
                    role="controller",
                    session=sid,
                    payload={"accepted": False, "similarity": result.score},
                ),
            )
        else:
            self._send_error(client, sid, result.reason or "capture failed")

    def _on_code_submit(self, client: _ClientState, message: Message) -> None:
        session = self._active_session_for(client, message)
        if session is None:
            return
        entry_ms = message.payload.get("entryMs")
        if isinstance(entry_ms, int) and entry_ms >= 0:
            self.controller.record_phase(session, Phase.PIN_ENTRY, entry_ms)
        result = self.controller.submit_code(session, str(message.payload.get("code", "")))
        sid = session.session_id
        if result.outcome is Outcome.UNLOCKED:
            self._send(
                client,
                Message(
                    type="CODE_RESULT",
                    role="controller",
                    session=sid,
                    payload={
                        "result": "ok",
                        "employeeName": result.employee_name,
                        "attemptsUsed": result.attempts_used,
                    },
                ),
            )
            self._send(
                client,
                Message(
                    type="UNLOCK_EVENT",
                    role="controller",
                    session=sid,
                    payload={"windowMs": self.controller.flow_cfg.unlock_window_ms},
                ),
            )
        elif result.outcome is Outcome.NEW_CHALLENGE:
            self._send(
                client,
                Message(
                    type="CODE_RESULT",
                    role="controller",
                    session=sid,
                    payload={"result": "retry", "attemptsUsed": result.attempts_used},
                ),
            )
        elif result.outcome is Outcome.LOCKED_OUT:
            self._send(
                client,
                Message(
                    type="CODE_RESULT",
                    role="controller",
                    session=sid,
                    payload={
                        "result": "locked_out",
                        "attemptsUsed": result.attempts_used,
                        "reason": result.reason,
                    },
                ),
            )
        else:
            self._send_error(client, sid, result.reason or "code submission failed")

    def _on_guest_audio(self, client: _ClientState, message: Message) -> None:
        session = self._active_session_for(client, message)
        if session is None:
            return
        try:
            audio = base64.b64decode(message.payload.get("audioB64", ""), validate=True)
        except (binascii.Error, ValueError):
            self._send_error(client, message.session, "audioB64 is not valid base64")
            return
        result = self.controller.handle_utterance(session, audio)
        self._send_guest_outcome(client, session.session_id, result)

    def _on_guest_confirm(self, client: _ClientState, message: Message) -> None:
        session = self._active_session_for(client, message)
        if session is None:
            return
        answer = message.payload.get("answer")
        if answer not in ("yes", "no"):
            self._send_error(client, message.session, "answer must be 'yes' or 'no'")
            return
        result = self.controller.confirm_guest(session, yes=answer == "yes")
        self._send_guest_outcome(client, session.session_id, result)

    def _send_guest_outcome(self, client: _ClientState, sid: str, result: StepResult) -> None:
        if result.outcome is Outcome.GUEST_NOTIFIED:
            self._send(
                client,
                Message(
                    type="GUEST_RESULT",
                    role="controller",
                    session=sid,
                    payload={"outcome": "notified", "employeeName": result.employee_name},
                ),
            )
        elif result.outcome is Outcome.CONFIRM_REQUESTED:
            self._send(
                client,
                Message(
                    type="GUEST_MATCH",
                    role="controller",
                    session=sid,
                    payload={
                        "band": "confirm",
                        "candidateName": result.employee_name,
                        "score": result.score,
                    },
                ),
            )
        elif result.outcome is Outcome.RETRY_PROMPT:
            self._send(
                client,
                Message(
                    type="GUEST_MATCH",
                    role="controller",
                    session=sid,
                    payload={"band": "retry", "score": result.score},
                ),
            )
        elif result.outcome is Outcome.BACK_TO_UTTERANCE:
            self._send(
                client,
                Message(
                    type="GUEST_RESULT",
                    role="controller",
                    session=sid,
                    payload={"outcome": "ask_again"},
                ),
            )
        else:
            self._send_error(client, sid, result.reason or "guest step failed")

    def _on_delivery(self, client: _ClientState, message: Message) -> None:
        session = self._active_session_for(client, message)
        if session is None:
            return
        result = self.controller.handle_delivery(session)
        if result.outcome is Outcome.DELIVERY_NOTIFIED:
            self._send(
                client,
                Message(
                    type="DELIVERY",
                    role="controller",
                    session=session.session_id,
                    payload={"outcome": "notified"},
                ),
            )
        else:
            self._send_error(client, session.session_id, result.reason or "delivery notice failed")

    def _on_door_error(self, client: _ClientState, message: Message) -> None:
        # the door unit reports a client-side failure (e.g. its UI dropped);
        # terminate the session fail-closed
        session = self.controller.active_session
        if session is not None and not session.terminal and session.session_id == message.session:
            self.controller.abort_session(session, message.payload.get("reason", "door unit error"))
