"""Shared loopback rig: real controller server + door and notifier clients."""

import contextlib
import random

from doorkeep.clocks import SimulatedClock
from doorkeep.crypto import CipherKey
from doorkeep.directory import load_directory
from doorkeep.doorunit import DoorUnitClient
from doorkeep.flows import AccessController, FlowConfig
from doorkeep.notify import NotifierClient, RecordingSink
from doorkeep.recognition import RecognitionConfig, ScriptedFaceProvider
from doorkeep.server import ControllerServer, RemoteNotifierSink
from doorkeep.transcription import ScriptedSpeechProvider

RIG_KEY = CipherKey(bytes(range(100, 132)))

RIG_EMPLOYEES = [
    {"id": "e1", "firstName": "Anna", "lastName": "Lindberg", "notifyHandle": "@anna"},
    {"id": "e2", "firstName": "Bo", "lastName": "Ek", "notifyHandle": "@bo"},
]

RIG_FACE_SCRIPT = [
    {"probeTag": "genu94", "employeeId": "e1", "similarity": 94.25},
    {"probeTag": "imp73", "employeeId": "e2", "similarity": 73.1},
]

RIG_SPEECH_SCRIPT = [
    {"audioTag": "anna100", "transcript": "anna lindberg"},
    {"audioTag": "fuzzy", "transcript": "annz lzndzzrg"},
    {"audioTag": "noise", "transcript": "zzzzz zzzzz zzzzz"},
]


class LoopbackRig:
    def __init__(self, **overrides):
        self.clock = SimulatedClock(0)
        self.recording = RecordingSink()
        self.sink = RemoteNotifierSink(ack_timeout_s=overrides.pop("ack_timeout_s", 2.0))
        directory = load_directory(overrides.pop("directory", RIG_EMPLOYEES))
        face_provider = overrides.pop("face_provider", None) or ScriptedFaceProvider.from_script(
            overrides.pop("face_script", RIG_FACE_SCRIPT), clock=self.clock
        )
        self.controller = AccessController(
            directory=directory,
            face_provider=face_provider,
            speech_provider=ScriptedSpeechProvider.from_script(
                overrides.pop("speech_script", RIG_SPEECH_SCRIPT)
            ),
            sink=self.sink,
            cipher_key=RIG_KEY,
            clock=self.clock,
            rng=random.Random(99),
            recognition_cfg=overrides.pop("recognition_cfg", RecognitionConfig()),
            flow_cfg=overrides.pop("flow_cfg", FlowConfig()),
        )
        self.server = ControllerServer(self.controller, sink=self.sink, **overrides)
        self.host, self.port = self.server.start()
        self.door = None
        self.notifier = None

    def connect_door(self) -> DoorUnitClient:
        self.door = DoorUnitClient(self.host, self.port)
        return self.door

    def connect_notifier(self) -> NotifierClient:
        import time

        self.notifier = NotifierClient(self.host, self.port, self.recording)
        deadline = time.time() + 5
        while time.time() < deadline and self.sink._conn is None:
            time.sleep(0.01)
        assert self.sink._conn is not None, "notifier never registered"
        return self.notifier

    def close(self):
        if self.door is not None:
            self.door.close()
        if self.notifier is not None:
            self.notifier.close()
        self.server.stop()


@contextlib.contextmanager
def loopback_rig(**overrides):
    rig = LoopbackRig(**overrides)
    try:
        yield rig
    finally:
        rig.close()
