import json
import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RIG_KEY, loopback_rig
from trace_validator import validate_wire_trace
from doorkeep.flows import SessionState
from doorkeep.protocol import (
    HEADER_LEN,
    MAX_FRAME_BYTES,
    SENDABLE,
    FrameTooLargeError,
    Message,
    SchemaError,
    decode_frame,
    encode_frame,
)
from doorkeep.recognition import tagged_bytes


def msg(type="PING", role="controller", **kwargs):
    return Message(type=type, role=role, **kwargs)


# -- framing -------------------------------------------------------------------


def test_frame_layout():
    message = msg("HELLO", "door", payload={})
    frame = encode_frame(message)
    body = json.dumps(message.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    assert frame[:HEADER_LEN] == len(body).to_bytes(4, "big")
    assert frame[HEADER_LEN:] == body


def test_frame_length_prefix_matches_payload():
    frame = encode_frame(msg())
    declared = int.from_bytes(frame[:4], "big")
    assert declared == len(frame) - 4


def test_oversize_encode_rejected():
    big = Message(type="NOTIFY", role="controller", payload={"text": "x" * (MAX_FRAME_BYTES + 1)})
    with pytest.raises(FrameTooLargeError):
        encode_frame(big)


def test_partial_header_needs_more():
    frame = encode_frame(msg())
    assert decode_frame(frame[:3]) is None


def test_partial_body_needs_more():
    frame = encode_frame(msg())
    assert decode_frame(frame[:-1]) is None


def test_two_frames_pipelined():
    m1 = msg("PING", "door")
    m2 = msg("PONG", "controller")
    buffer = encode_frame(m1) + encode_frame(m2)
    first, rest = decode_frame(buffer)
    assert first == m1
    second, rest2 = decode_frame(rest)
    assert second == m2
    assert rest2 == b""


def test_oversize_header_is_protocol_error():
    header = (20 * 1024 * 1024).to_bytes(4, "big")
    with pytest.raises(FrameTooLargeError):
        decode_frame(header + b"x")


def test_invalid_json_is_schema_error():
    bad = b"not json at all"
    with pytest.raises(SchemaError):
        decode_frame(len(bad).to_bytes(4, "big") + bad)


def test_unknown_type_rejected():
    doc = {"v": 1, "type": "TELEPORT", "role": "door", "session": None, "payload": {}}
    raw = json.dumps(doc).encode()
    with pytest.raises(SchemaError):
        decode_frame(len(raw).to_bytes(4, "big") + raw)


def test_role_type_authority_in_schema():
    with pytest.raises(SchemaError):
        Message(type="UNLOCK_EVENT", role="door")
    with pytest.raises(SchemaError):
        Message(type="CAPTURE_UPLOAD", role="controller")


def test_wrong_version_rejected():
    doc = {"v": 2, "type": "PING", "role": "door", "session": None, "payload": {}}
    raw = json.dumps(doc).encode()
    with pytest.raises(SchemaError):
        decode_frame(len(raw).to_bytes(4, "big") + raw)


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-1000, 1000) | st.text(max_size=8),
    lambda children: st.lists(children, max_size=3)
    | st.dictionaries(st.text(max_size=6), children, max_size=3),
    max_leaves=8,
)


@st.composite
def messages(draw):
    role = draw(st.sampled_from(sorted(SENDABLE)))
    mtype = draw(st.sampled_from(sorted(SENDABLE[role])))
    session = draw(st.none() | st.text(max_size=10))
    payload = draw(st.dictionaries(st.text(max_size=6), json_values, max_size=4))
    return Message(type=mtype, role=role, session=session, payload=payload)


@settings(max_examples=300)
@given(message=messages())
def test_roundtrip_identity(message):
    decoded, rest = decode_frame(encode_frame(message))
    assert decoded == message
    assert rest == b""


@settings(max_examples=200)
@given(chunks=st.binary(max_size=64), seed=st.integers(0, 2**16))
def test_fuzzed_streams_fail_cleanly(chunks, seed):
    rng = random.Random(seed)
    stream = chunks + rng.randbytes(rng.randrange(0, 32))
    try:
        decode_frame(stream)
    except (FrameTooLargeError, SchemaError):
        pass  # the only permitted failure modes


# -- loopback server behavior ------------------------------------------------------


def test_employee_happy_path_trace():
    with loopback_rig() as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        trace = ["SESSION_START", "CAPTURE_UPLOAD"]
        door.start_session("s-hp", "employee")
        door.upload_probe("s-hp", tagged_bytes("genu94"), RIG_KEY)
        challenge = door.next_message()
        trace.append(challenge.type)
        assert challenge.type == "CODE_CHALLENGE"
        code = rig.recording.directs()[-1].text.split()[-1]
        door.submit_code("s-hp", code)
        trace.append("CODE_SUBMIT")
        result = door.next_message()
        trace.append(result.type)
        assert result.payload["result"] == "ok"
        unlock = door.next_message()
        trace.append(unlock.type)
        assert trace == [
            "SESSION_START",
            "CAPTURE_UPLOAD",
            "CODE_CHALLENGE",
            "CODE_SUBMIT",
            "CODE_RESULT",
            "UNLOCK_EVENT",
        ]
        assert unlock.payload["windowMs"] == 5000
        validate_wire_trace(
            "employee",
            [
                ("SESSION_START", None),
                ("CAPTURE_UPLOAD", None),
                ("CODE_CHALLENGE", None),
                ("CODE_SUBMIT", None),
                ("CODE_RESULT", "ok"),
                ("UNLOCK_EVENT", None),
            ],
        )


def test_spoofed_unlock_event_rejected():
    with loopback_rig() as rig:
        door = rig.connect_door()
        # craft the frame by hand: the client-side schema would refuse it
        doc = {"v": 1, "type": "UNLOCK_EVENT", "role": "door", "session": "x", "payload": {}}
        raw = json.dumps(doc).encode()
        door.conn._sock.sendall(len(raw).to_bytes(4, "big") + raw)
        reply = door.next_message()
        assert reply.type == "ERROR"
        assert rig.controller.actuator.timeline.unlock_windows() == []


def test_forged_controller_role_rejected():
    with loopback_rig() as rig:
        door = rig.connect_door()
        doc = {"v": 1, "type": "UNLOCK_EVENT", "role": "controller", "session": None, "payload": {}}
        raw = json.dumps(doc).encode()
        door.conn._sock.sendall(len(raw).to_bytes(4, "big") + raw)
        reply = door.next_message()
        assert reply.type == "ERROR"
        assert rig.controller.actuator.timeline.unlock_windows() == []


def test_notifier_disconnected_during_code_dispatch_fails_closed():
    with loopback_rig(ack_timeout_s=0.5) as rig:
        door = rig.connect_door()  # no notifier connected at all
        door.start_session("s-nd", "employee")
        door.upload_probe("s-nd", tagged_bytes("genu94"), RIG_KEY)
        reply = door.next_message()
        assert reply.type == "ERROR"
        session = rig.controller.active_session
        assert session.state is SessionState.ERROR
        assert rig.controller.actuator.timeline.unlock_windows() == []


def test_door_disconnect_mid_session_aborts_fail_closed():
    with loopback_rig() as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.start_session("s-dd", "employee")
        door.upload_probe("s-dd", tagged_bytes("genu94"), RIG_KEY)
        assert door.next_message().type == "CODE_CHALLENGE"
        door.close()
        rig.door = None
        deadline = time.time() + 5
        session = rig.controller.active_session
        while time.time() < deadline and not session.terminal:
            time.sleep(0.05)
        assert session.state is SessionState.ERROR
        assert rig.controller.actuator.timeline.unlock_windows() == []


def test_busy_session_start_answered_with_error():
    with loopback_rig() as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.start_session("s-one", "employee")
        door.start_session("s-two", "guest")
        reply = door.next_message()
        assert reply.type == "ERROR"
        assert "active" in reply.payload["reason"]


def test_unknown_session_id_rejected():
    with loopback_rig() as rig:
        door = rig.connect_door()
        door.submit_code("never-started", "1234")
        assert door.next_message().type == "ERROR"


def test_schema_violation_keeps_connection():
    with loopback_rig() as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.conn._sock.sendall(len(b"garbage!").to_bytes(4, "big") + b"garbage!")
        assert door.next_message().type == "ERROR"
        # the connection survives: a valid exchange still works
        door.start_session("s-ok", "delivery")
        door.delivery("s-ok")
        reply = door.next_message()
        assert reply.type == "DELIVERY"
        assert reply.payload["outcome"] == "notified"


def test_guest_flow_over_wire_confirm_path():
    with loopback_rig() as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.start_session("s-g", "guest")
        door.send_audio("s-g", tagged_bytes("fuzzy"))
        match = door.next_message()
        assert match.type == "GUEST_MATCH"
        assert match.payload["band"] == "confirm"
        door.confirm("s-g", yes=True)
        result = door.next_message()
        assert result.type == "GUEST_RESULT"
        assert result.payload["outcome"] == "notified"
        assert rig.recording.directs()[-1].target == "@anna"
        validate_wire_trace(
            "guest",
            [
                ("SESSION_START", None),
                ("GUEST_AUDIO", None),
                ("GUEST_MATCH", "confirm"),
                ("GUEST_CONFIRM", None),
                ("GUEST_RESULT", "notified"),
            ],
        )


def test_guest_retry_band_over_wire():
    with loopback_rig() as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.start_session("s-r", "guest")
        door.send_audio("s-r", tagged_bytes("noise"))
        match = door.next_message()
        assert match.type == "GUEST_MATCH"
        assert match.payload["band"] == "retry"
        # still listening: an exact name now notifies
        door.send_audio("s-r", tagged_bytes("anna100"))
        result = door.next_message()
        assert result.type == "GUEST_RESULT"
        assert result.payload["outcome"] == "notified"
        validate_wire_trace(
            "guest",
            [
                ("SESSION_START", None),
                ("GUEST_AUDIO", None),
                ("GUEST_MATCH", "retry"),
                ("GUEST_AUDIO", None),
                ("GUEST_RESULT", "notified"),
            ],
        )


def test_ping_answered_with_pong():
    import socket

    from doorkeep.protocol import FrameConnection

    with loopback_rig() as rig:
        sock = socket.create_connection((rig.host, rig.port))
        conn = FrameConnection(sock)
        conn.send(Message(type="HELLO", role="door", payload={"role": "door"}))
        conn.send(Message(type="PING", role="door"))
        reply = conn.recv_message(timeout=5)
        assert reply.type == "PONG"
        conn.close()


def test_unresponsive_client_dropped_after_missed_pings():
    import socket

    from doorkeep.protocol import ConnectionClosed, FrameConnection

    with loopback_rig(heartbeat_interval_s=0.2) as rig:
        sock = socket.create_connection((rig.host, rig.port))
        conn = FrameConnection(sock)
        conn.send(Message(type="HELLO", role="door", payload={"role": "door"}))
        # read pings but never answer them; after three the server hangs up
        deadline = time.time() + 5
        pings = 0
        try:
            while time.time() < deadline:
                message = conn.recv_message(timeout=1.0)
                if message.type == "PING":
                    pings += 1
        except (ConnectionClosed, OSError):
            pass
        else:
            raise AssertionError("server never dropped the unresponsive client")
        assert pings >= 3
        conn.close()
