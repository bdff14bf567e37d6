import base64

import pytest
from starlette.testclient import TestClient

from conftest import RIG_KEY, loopback_rig
from trace_validator import validate_ui_trace
from doorkeep.crypto import CipherKey, xor_transform
from doorkeep.doorunit import (
    DeviceError,
    DoorUnit,
    DoorUnitConfig,
    FileBackedDevice,
    build_kiosk_app,
    capture_image,
)
from doorkeep.recognition import FaceProvider, MatchResult, ScriptedFaceProvider, tagged_bytes

OTHER_KEY = CipherKey(bytes(range(200, 232)))


# -- devices ---------------------------------------------------------------


def test_file_backed_device_reads_file(tmp_path):
    (tmp_path / "a.jpg").write_bytes(b"frame-a")
    device = FileBackedDevice.from_dir("camera", tmp_path)
    assert capture_image(device) == b"frame-a"


def test_file_backed_device_cycles_deterministically(tmp_path):
    (tmp_path / "a.jpg").write_bytes(b"frame-a")
    (tmp_path / "b.jpg").write_bytes(b"frame-b")
    device = FileBackedDevice.from_dir("camera", tmp_path)
    assert [capture_image(device) for _ in range(3)] == [b"frame-a", b"frame-b", b"frame-a"]


def test_file_backed_device_empty_dir_errors(tmp_path):
    device = FileBackedDevice.from_dir("camera", tmp_path)
    with pytest.raises(DeviceError):
        capture_image(device)


# -- probe upload ------------------------------------------------------------


class ProbeObserver(FaceProvider):
    """Test-only: records what the controller hands it, then answers."""

    def __init__(self):
        self.seen = []

    def search(self, probe):
        self.seen.append(bytes(probe))
        return MatchResult("e1", 94.25)


def test_upload_probe_round_trips_exact_bytes_over_wire():
    observer = ProbeObserver()
    with loopback_rig(face_provider=observer) as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        image = tagged_bytes("genu94", 64) + bytes(range(256))
        door.start_session("s-rt", "employee")
        door.upload_probe("s-rt", image, RIG_KEY)
        assert door.next_message().type == "CODE_CHALLENGE"
        assert observer.seen == [image]


def test_no_plaintext_crosses_the_wire():
    image = tagged_bytes("genu94", 64) + b"VISIBLE-FACE-PIXELS"
    payload = {"captured": None}

    class Capture(FaceProvider):
        def search(self, probe):
            return MatchResult("e1", 94.25)

    with loopback_rig(face_provider=Capture()) as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.start_session("s-pt", "employee")

        # reproduce what upload_probe puts on the wire
        from doorkeep.protocol import encode_frame, Message

        ciphertext = xor_transform(image, RIG_KEY)
        frame = encode_frame(
            Message(
                type="CAPTURE_UPLOAD",
                role="door",
                session="s-pt",
                payload={"imageB64": base64.b64encode(ciphertext).decode()},
            )
        )
        assert b"VISIBLE-FACE-PIXELS" not in frame
        door.conn._sock.sendall(frame)
        assert door.next_message().type == "CODE_CHALLENGE"


def test_mismatched_keys_take_denied_path():
    provider = ScriptedFaceProvider.from_script(
        [{"probeTag": "genu94", "employeeId": "e1", "similarity": 94.25}],
        unknown_is_no_match=True,
    )
    with loopback_rig(face_provider=provider) as rig:
        rig.connect_notifier()
        door = rig.connect_door()
        door.start_session("s-mk", "employee")
        door.upload_probe("s-mk", tagged_bytes("genu94"), OTHER_KEY)  # wrong key
        reply = door.next_message()
        assert reply.type == "AUTH_RESULT"
        assert reply.payload["accepted"] is False


def test_empty_image_rejected_client_side():
    with loopback_rig() as rig:
        door = rig.connect_door()
        with pytest.raises(ValueError):
            door.upload_probe("s-e", b"", RIG_KEY)


# -- kiosk gateway -----------------------------------------------------------------


@pytest.fixture
def kiosk(tmp_path):
    """Full stack: rig + door unit + kiosk websocket client."""
    camera = FileBackedDevice("camera", [])
    microphone = FileBackedDevice("microphone", [])
    with loopback_rig() as rig:
        rig.connect_notifier()
        config = DoorUnitConfig(
            controller_host=rig.host,
            controller_port=rig.port,
            cipher_key=RIG_KEY,
            menu_delay_s=0,
        )
        unit = DoorUnit(config, camera=camera, microphone=microphone)
        unit.connect()
        app = build_kiosk_app(unit)
        with TestClient(app) as http:
            with http.websocket_connect("/kiosk") as ws:
                assert ws.receive_json()["name"] == "showMainMenu"
                yield rig, unit, ws, camera, microphone, http
        unit.close()


def set_camera(camera, tmp_path, tag, count=1):
    files = []
    for i in range(count):
        path = tmp_path / f"probe{i}.bin"
        path.write_bytes(tagged_bytes(tag, 32))
        files.append(path)
    camera.paths = files
    camera._cursor = 0


def press(ws, name, **payload):
    ws.send_json({"direction": "FromUi", "name": name, "payload": payload})


def test_employee_happy_path_via_kiosk(kiosk, tmp_path):
    rig, unit, ws, camera, _, _ = kiosk
    set_camera(camera, tmp_path, "genu94")
    press(ws, "pressEmployee")
    assert ws.receive_json()["name"] == "promptCapture"
    prompt = ws.receive_json()
    assert prompt["name"] == "promptCode"
    assert prompt["payload"]["attemptsLeft"] == 3
    code = rig.recording.directs()[-1].text.split()[-1]
    press(ws, "keypadSubmit", code=code)
    welcome = ws.receive_json()
    assert welcome["name"] == "showWelcome"
    assert welcome["payload"]["name"] == "Anna Lindberg"
    assert ws.receive_json()["name"] == "showMainMenu"
    assert rig.controller.actuator.timeline.unlock_windows() != []
    shown = [n for d, n in unit.event_log if d == "to_ui"]
    assert shown[0] == "showMainMenu"
    assert validate_ui_trace(shown[1:]) == "MainMenu"


def test_employee_denied_via_kiosk(kiosk, tmp_path):
    rig, unit, ws, camera, _, _ = kiosk
    set_camera(camera, tmp_path, "imp73")
    press(ws, "pressEmployee")
    assert ws.receive_json()["name"] == "promptCapture"
    assert ws.receive_json()["name"] == "showDenied"
    assert ws.receive_json()["name"] == "showMainMenu"
    assert rig.controller.actuator.timeline.unlock_windows() == []


def test_three_keypad_failures_return_to_main_menu(kiosk, tmp_path):
    rig, unit, ws, camera, _, _ = kiosk
    set_camera(camera, tmp_path, "genu94")
    press(ws, "pressEmployee")
    assert ws.receive_json()["name"] == "promptCapture"
    assert ws.receive_json()["name"] == "promptCode"
    for attempt in range(3):
        code = rig.recording.directs()[-1].text.split()[-1]
        wrong = "0000" if code != "0000" else "0001"
        press(ws, "keypadSubmit", code=wrong)
        event = ws.receive_json()
        if attempt < 2:
            assert event["name"] == "promptCode"
            assert event["payload"]["attemptsLeft"] == 2 - attempt
        else:
            assert event["name"] == "showMainMenu"
    assert rig.controller.actuator.timeline.unlock_windows() == []


def test_guest_confirm_flow_via_kiosk(kiosk, tmp_path):
    rig, unit, ws, _, microphone, _ = kiosk
    audio = tmp_path / "utterance.bin"
    audio.write_bytes(tagged_bytes("fuzzy", 32))
    microphone.paths = [audio]
    press(ws, "pressGuest")
    assert ws.receive_json()["name"] == "promptSpeak"
    press(ws, "recordDone")
    confirm = ws.receive_json()
    assert confirm["name"] == "askConfirm"
    assert confirm["payload"]["candidate"] == "Anna Lindberg"
    press(ws, "confirmYes")
    assert ws.receive_json()["name"] == "showNotified"
    assert ws.receive_json()["name"] == "showMainMenu"
    assert rig.recording.directs()[-1].target == "@anna"
    shown = [n for d, n in unit.event_log if d == "to_ui"]
    assert validate_ui_trace(shown[1:]) == "MainMenu"


def test_guest_confirm_no_asks_again(kiosk, tmp_path):
    rig, unit, ws, _, microphone, _ = kiosk
    audio = tmp_path / "utterance.bin"
    audio.write_bytes(tagged_bytes("fuzzy", 32))
    microphone.paths = [audio]
    press(ws, "pressGuest")
    assert ws.receive_json()["name"] == "promptSpeak"
    press(ws, "recordDone")
    assert ws.receive_json()["name"] == "askConfirm"
    press(ws, "confirmNo")
    assert ws.receive_json()["name"] == "promptSpeak"
    assert rig.recording.directs() == []


def test_guest_retry_band_via_kiosk(kiosk, tmp_path):
    rig, unit, ws, _, microphone, _ = kiosk
    audio = tmp_path / "noise.bin"
    audio.write_bytes(tagged_bytes("noise", 32))
    microphone.paths = [audio]
    press(ws, "pressGuest")
    assert ws.receive_json()["name"] == "promptSpeak"
    press(ws, "recordDone")
    assert ws.receive_json()["name"] == "showRetry"
    assert ws.receive_json()["name"] == "promptSpeak"


def test_delivery_via_kiosk(kiosk, tmp_path):
    rig, unit, ws, _, _, _ = kiosk
    press(ws, "pressDelivery")
    assert ws.receive_json()["name"] == "showNotified"
    assert ws.receive_json()["name"] == "showMainMenu"
    assert rig.recording.channels()[-1].target == "#deliveries"
    assert rig.controller.actuator.timeline.unlock_windows() == []


def test_second_ui_connection_rejected(kiosk):
    _, _, _, _, _, http = kiosk
    from starlette.websockets import WebSocketDisconnect

    with pytest.raises(WebSocketDisconnect):
        with http.websocket_connect("/kiosk") as second:
            second.receive_json()


def test_unknown_ui_event_surfaces_error(kiosk):
    _, unit, ws, _, _, _ = kiosk
    press(ws, "pressTurbo")
    assert ws.receive_json()["name"] == "showError"


def test_capture_only_after_ui_trigger(kiosk, tmp_path):
    rig, unit, ws, camera, _, _ = kiosk
    set_camera(camera, tmp_path, "genu94")
    press(ws, "pressEmployee")
    for _ in range(2):
        ws.receive_json()
    log = unit.event_log
    trigger_positions = [i for i, (d, n) in enumerate(log) if d == "from_ui" and n == "pressEmployee"]
    capture_positions = [i for i, (d, n) in enumerate(log) if n == "promptCapture"]
    assert trigger_positions and capture_positions
    assert all(any(t < c for t in trigger_positions) for c in capture_positions)
    # the device itself was touched exactly once, after the trigger
    assert camera._cursor == 1


def test_camera_unavailable_shows_error(kiosk):
    rig, unit, ws, camera, _, _ = kiosk
    camera.paths = []
    press(ws, "pressEmployee")
    assert ws.receive_json()["name"] == "promptCapture"
    assert ws.receive_json()["name"] == "showError"
