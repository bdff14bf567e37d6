"""Controller-side session flows for the three door functions.

Employee: capture -> face comparison -> PIN challenge over direct
message -> keypad entry -> 5 s unlock pulse. Three bad entries end the
session; every retry gets a fresh code and the old one stops working.

Guest: utterance -> transcription -> fuzzy name match -> notify /
confirm / retry depending on the score band.

Delivery: one channel notice, door stays locked.

Everything here is fail-closed: a provider outage, a notification
failure, or a disconnect terminates the session in an error state with
the door still locked. Probe and audio bytes are never attached to a
session; they live only inside the handling call.
"""

from __future__ import annotations

import itertools
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import notify
from .clocks import Clock, WallClock
from .crypto import CipherKey, xor_transform
from .directory import Directory, TemplateStore
from .notify import DispatchError, NotificationSink
from .recognition import (
    EmptyCollectionError,
    FaceProvider,
    ProviderUnavailableError,
    RecognitionConfig,
    ScriptedMissError,
    compare_probe,
    decide_access,
)
from .transcription import (
    Band,
    SpeechProvider,
    TranscriptionConfig,
    match_name,
    transcribe,
)

log = logging.getLogger(__name__)

DEFAULT_UNLOCK_WINDOW_MS = 5000
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_CHALLENGE_EXPIRY_S = 120
DEFAULT_DELIVERY_CHANNEL = "#deliveries"

GUEST_WAITING_TEXT = "A guest is waiting outside the entrance door."
DELIVERY_TEXT = "There is a delivery at the door."


class SessionKind(Enum):
    EMPLOYEE = "employee"
    GUEST = "guest"
    DELIVERY = "delivery"


class SessionState(Enum):
    # employee
    AWAITING_CAPTURE = "awaiting_capture"
    AWAITING_CODE = "awaiting_code"
    UNLOCKED = "unlocked"
    DENIED = "denied"
    LOCKED_OUT = "locked_out"
    # guest
    AWAITING_UTTERANCE = "awaiting_utterance"
    AWAITING_CONFIRMATION = "awaiting_confirmation"
    NOTIFIED = "notified"
    # delivery
    NOTIFY_PENDING = "notify_pending"
    # any
    ERROR = "error"


TERMINAL_STATES = frozenset(
    {
        SessionState.UNLOCKED,
        SessionState.DENIED,
        SessionState.LOCKED_OUT,
        SessionState.NOTIFIED,
        SessionState.ERROR,
    }
)

INITIAL_STATE = {
    SessionKind.EMPLOYEE: SessionState.AWAITING_CAPTURE,
    SessionKind.GUEST: SessionState.AWAITING_UTTERANCE,
    SessionKind.DELIVERY: SessionState.NOTIFY_PENDING,
}


class Outcome(Enum):
    CHALLENGE_ISSUED = "challenge_issued"
    DENIED = "denied"
    UNLOCKED = "unlocked"
    NEW_CHALLENGE = "new_challenge"
    LOCKED_OUT = "locked_out"
    GUEST_NOTIFIED = "guest_notified"
    CONFIRM_REQUESTED = "confirm_requested"
    RETRY_PROMPT = "retry_prompt"
    BACK_TO_UTTERANCE = "back_to_utterance"
    DELIVERY_NOTIFIED = "delivery_notified"
    ERROR = "error"


class Phase(Enum):
    CAPTURE = "capture"
    CLOUD_AUTH = "cloud_auth"
    PIN_ENTRY = "pin_entry"


class FlowStateError(RuntimeError):
    """An operation was applied to a session in the wrong kind or state."""


class SessionBusyError(RuntimeError):
    """A session is already active on the (single) door."""


class PulseRejectedError(RuntimeError):
    """Unlock pulse arrived while an unlock window was still open."""


@dataclass(frozen=True)
class PinChallenge:
    code: str
    challenge_id: str
    issued_at_ms: int

    def __post_init__(self):
        if len(self.code) != 4 or not self.code.isdigit():
            raise ValueError("challenge code must be exactly four decimal digits")


def generate_code(rng: random.Random, challenge_id: str = "", issued_at_ms: int = 0) -> PinChallenge:
    """Fresh challenge with a code drawn uniformly from the 10000 four-digit
    strings, leading zeros kept."""
    return PinChallenge(
        code=f"{rng.randrange(10000):04d}",
        challenge_id=challenge_id,
        issued_at_ms=issued_at_ms,
    )


class LineState(Enum):
    HELD = "held"
    PULSED = "pulsed"
    UNLOCK_START = "unlocked_window_start"
    UNLOCK_END = "unlocked_window_end"


@dataclass(frozen=True)
class LockEvent:
    at_ms: int
    line: LineState


@dataclass
class LockTimeline:
    events: list[LockEvent] = field(default_factory=list)

    def unlock_windows(self) -> list[tuple[int, int]]:
        starts = [e.at_ms for e in self.events if e.line is LineState.UNLOCK_START]
        ends = [e.at_ms for e in self.events if e.line is LineState.UNLOCK_END]
        return list(zip(starts, ends))


class LockActuator:
    """Simulated lock line. The physical line is held at 12 V; a pulse to
    0 V and back opens a fixed unlock window, after which the line holds
    again. Pulses during an open window are rejected."""

    def __init__(self, clock: Clock, unlock_window_ms: int = DEFAULT_UNLOCK_WINDOW_MS):
        self._clock = clock
        self.unlock_window_ms = unlock_window_ms
        self.timeline = LockTimeline()
        self.timeline.events.append(LockEvent(clock.now_ms(), LineState.HELD))
        self._window_end: Optional[int] = None

    def pulse(self) -> None:
        now = self._clock.now_ms()
        if self._window_end is not None and now < self._window_end:
            raise PulseRejectedError(f"unlock window open until t={self._window_end}ms")
        end = now + self.unlock_window_ms
        self.timeline.events.append(LockEvent(now, LineState.PULSED))
        self.timeline.events.append(LockEvent(now, LineState.UNLOCK_START))
        self.timeline.events.append(LockEvent(end, LineState.UNLOCK_END))
        self.timeline.events.append(LockEvent(end, LineState.HELD))
        self._window_end = end


@dataclass
class AccessSession:
    session_id: str
    kind: SessionKind
    state: SessionState
    created_at_ms: int
    attempts_used: int = 0
    active_challenge: Optional[PinChallenge] = None
    phase_timings: list[tuple[Phase, int]] = field(default_factory=list)
    employee_id: Optional[str] = None
    employee_name: Optional[str] = None
    candidate_id: Optional[str] = None
    candidate_name: Optional[str] = None
    candidate_score: Optional[int] = None
    ended_reason: Optional[str] = None

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def to_dict(self) -> dict:
        """Serializable dump. Never includes probe/audio bytes (none are
        kept) and masks the active challenge code."""
        return {
            "sessionId": self.session_id,
            "kind": self.kind.value,
            "state": self.state.value,
            "createdAtMs": self.created_at_ms,
            "attemptsUsed": self.attempts_used,
            "activeChallengeId": self.active_challenge.challenge_id if self.active_challenge else None,
            "phaseTimings": [(p.value, d) for p, d in self.phase_timings],
            "employeeId": self.employee_id,
            "employeeName": self.employee_name,
            "candidateId": self.candidate_id,
            "candidateName": self.candidate_name,
            "candidateScore": self.candidate_score,
            "endedReason": self.ended_reason,
        }


@dataclass(frozen=True)
class StepResult:
    outcome: Outcome
    employee_id: Optional[str] = None
    employee_name: Optional[str] = None
    score: Optional[int] = None
    attempts_used: int = 0
    reason: Optional[str] = None


@dataclass(frozen=True)
class FlowConfig:
    unlock_window_ms: int = DEFAULT_UNLOCK_WINDOW_MS
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    challenge_expiry_s: int = DEFAULT_CHALLENGE_EXPIRY_S
    delivery_channel: str = DEFAULT_DELIVERY_CHANNEL


class AccessController:
    """Owns the single door's session lifecycle and all side effects:
    face/speech providers, notifications, template maintenance, and the
    lock line. One session at a time; transitions on a session are
    serialized by the caller (the protocol server runs one door client)."""

    def __init__(
        self,
        *,
        directory: Directory,
        face_provider: FaceProvider,
        speech_provider: SpeechProvider,
        sink: NotificationSink,
        cipher_key: CipherKey,
        template_store: Optional[TemplateStore] = None,
        actuator: Optional[LockActuator] = None,
        clock: Optional[Clock] = None,
        rng: Optional[random.Random] = None,
        recognition_cfg: RecognitionConfig = RecognitionConfig(),
        transcription_cfg: TranscriptionConfig = TranscriptionConfig(),
        flow_cfg: FlowConfig = FlowConfig(),
    ):
        self.directory = directory
        self.face_provider = face_provider
        self.speech_provider = speech_provider
        self.sink = sink
        self.cipher_key = cipher_key
        self.template_store = template_store
        self.clock = clock or WallClock()
        self.rng = rng or random.Random()
        self.actuator = actuator or LockActuator(self.clock, flow_cfg.unlock_window_ms)
        self.recognition_cfg = recognition_cfg
        self.transcription_cfg = transcription_cfg
        self.flow_cfg = flow_cfg
        self.active_session: Optional[AccessSession] = None
        self.finished_sessions: list[AccessSession] = []
        self._session_seq = itertools.count(1)
        self._challenge_seq = itertools.count(1)

    # -- session lifecycle -------------------------------------------------

    def start_session(self, kind: SessionKind, session_id: Optional[str] = None) -> AccessSession:
        if self.active_session is not None and not self.active_session.terminal:
            raise SessionBusyError("a door session is already active")
        session = AccessSession(
            session_id=session_id or f"s{next(self._session_seq)}",
            kind=kind,
            state=INITIAL_STATE[kind],
            created_at_ms=self.clock.now_ms(),
        )
        self.active_session = session
        return session

    def abort_session(self, session: AccessSession, reason: str) -> None:
        """Terminate a session as an error (client disconnect, UI drop).
        The door stays locked."""
        if not session.terminal:
            self._end(session, SessionState.ERROR, reason)

    def _end(self, session: AccessSession, state: SessionState, reason: Optional[str] = None) -> None:
        session.state = state
        session.active_challenge = None
        session.ended_reason = reason
        self.finished_sessions.append(session)

    def _require(self, session: AccessSession, kind: SessionKind, *states: SessionState) -> None:
        if session.kind is not kind:
            raise FlowStateError(f"operation requires a {kind.value} session")
        if session.state not in states:
            raise FlowStateError(
                f"operation invalid in state {session.state.value} "
                f"(expected {'/'.join(s.value for s in states)})"
            )

    # -- employee ----------------------------------------------------------

    def handle_capture(self, session: AccessSession, encrypted_probe: bytes) -> StepResult:
        """Decrypt and compare one probe. Accept issues a PIN challenge over
        a direct message; reject ends the session. Probe bytes are dropped
        when this call returns, whatever the outcome."""
        self._require(session, SessionKind.EMPLOYEE, SessionState.AWAITING_CAPTURE)
        if not encrypted_probe:
            self._end(session, SessionState.ERROR, "empty probe payload")
            return StepResult(Outcome.ERROR, reason="empty probe payload")
        probe = xor_transform(encrypted_probe, self.cipher_key)

        started = self.clock.now_ms()
        try:
            result = compare_probe(self.face_provider, probe, self.directory)
        except (ProviderUnavailableError, ScriptedMissError, EmptyCollectionError) as exc:
            self._end(session, SessionState.ERROR, f"comparison failed: {exc}")
            return StepResult(Outcome.ERROR, reason=str(exc))
        elapsed = self.clock.now_ms() - started
        if elapsed > 0:
            self.record_phase(session, Phase.CLOUD_AUTH, elapsed)

        decision = decide_access(result, self.recognition_cfg)
        if not decision.accepted:
            self._end(session, SessionState.DENIED, "similarity below threshold")
            return StepResult(Outcome.DENIED, score=int(result.similarity))

        employee = self.directory.require(decision.employee_id)
        self._maybe_update_template(employee.id, probe, result.similarity)
        session.employee_id = employee.id
        session.employee_name = employee.full_name
        if not self._issue_challenge(session):
            return StepResult(Outcome.ERROR, reason=session.ended_reason)
        return StepResult(
            Outcome.CHALLENGE_ISSUED,
            employee_id=employee.id,
            employee_name=employee.full_name,
            attempts_used=session.attempts_used,
        )

    def _maybe_update_template(self, employee_id: str, probe: bytes, similarity: float) -> None:
        # maintenance only; a storage hiccup must not block the entry flow
        if self.template_store is None:
            return
        try:
            self.template_store.maybe_store_template(employee_id, probe, similarity)
        except OSError:
            log.warning("template update failed for %s", employee_id)

    def _issue_challenge(self, session: AccessSession) -> bool:
        challenge = generate_code(
            self.rng,
            challenge_id=f"c{next(self._challenge_seq)}",
            issued_at_ms=self.clock.now_ms(),
        )
        employee = self.directory.require(session.employee_id)
        try:
            notify.send_direct(
                self.sink,
                employee,
                f"Your door entry code is {challenge.code}",
                now_ms=self.clock.now_ms(),
            )
        except (DispatchError, ValueError) as exc:
            self._end(session, SessionState.ERROR, f"code dispatch failed: {exc}")
            return False
        session.active_challenge = challenge
        session.state = SessionState.AWAITING_CODE
        return True

    def submit_code(self, session: AccessSession, entered: str) -> StepResult:
        """Check one keypad entry against the active challenge. A wrong or
        malformed entry burns an attempt and (below the limit) triggers a
        fresh code; the stale code is dead from that point on."""
        self._require(session, SessionKind.EMPLOYEE, SessionState.AWAITING_CODE)
        challenge = session.active_challenge
        if challenge is None:
            raise FlowStateError("no active challenge")

        age_ms = self.clock.now_ms() - challenge.issued_at_ms
        if age_ms > self.flow_cfg.challenge_expiry_s * 1000:
            self._end(session, SessionState.LOCKED_OUT, "challenge expired")
            return StepResult(
                Outcome.LOCKED_OUT, attempts_used=session.attempts_used, reason="challenge expired"
            )

        well_formed = len(entered) == 4 and entered.isdigit()
        if well_formed and entered == challenge.code:
            try:
                self.actuator.pulse()
            except PulseRejectedError as exc:
                self._end(session, SessionState.ERROR, f"lock pulse rejected: {exc}")
                return StepResult(Outcome.ERROR, reason=str(exc))
            name = session.employee_name
            self._end(session, SessionState.UNLOCKED)
            return StepResult(
                Outcome.UNLOCKED,
                employee_id=session.employee_id,
                employee_name=name,
                attempts_used=session.attempts_used,
            )

        # wrong or malformed: both burn an attempt (the wire cannot be
        # trusted to pre-validate the way the kiosk keypad does)
        session.attempts_used += 1
        if session.attempts_used >= self.flow_cfg.max_attempts:
            self._end(session, SessionState.LOCKED_OUT, "attempt limit reached")
            return StepResult(
                Outcome.LOCKED_OUT, attempts_used=session.attempts_used, reason="attempt limit reached"
            )
        if not self._issue_challenge(session):
            return StepResult(Outcome.ERROR, reason=session.ended_reason)
        return StepResult(Outcome.NEW_CHALLENGE, attempts_used=session.attempts_used)

    # -- guest ---------------------------------------------------------------

    def handle_utterance(self, session: AccessSession, audio: bytes) -> StepResult:
        """Transcribe one utterance and route by the name-match band.
        Audio bytes are dropped when this call returns."""
        self._require(session, SessionKind.GUEST, SessionState.AWAITING_UTTERANCE)
        if not audio:
            self._end(session, SessionState.ERROR, "empty audio payload")
            return StepResult(Outcome.ERROR, reason="empty audio payload")
        try:
            transcript = transcribe(self.speech_provider, audio)
        except (ProviderUnavailableError, ScriptedMissError) as exc:
            self._end(session, SessionState.ERROR, f"transcription failed: {exc}")
            return StepResult(Outcome.ERROR, reason=str(exc))

        match = match_name(transcript, self.directory, self.transcription_cfg)
        if match.band is Band.NOTIFY:
            employee = self.directory.require(match.employee_id)
            if not self._notify_guest_arrival(session, employee.id):
                return StepResult(Outcome.ERROR, reason=session.ended_reason)
            return StepResult(
                Outcome.GUEST_NOTIFIED,
                employee_id=employee.id,
                employee_name=employee.full_name,
                score=match.score,
            )
        if match.band is Band.CONFIRM:
            employee = self.directory.require(match.employee_id)
            session.candidate_id = employee.id
            session.candidate_name = employee.full_name
            session.candidate_score = match.score
            session.state = SessionState.AWAITING_CONFIRMATION
            return StepResult(
                Outcome.CONFIRM_REQUESTED,
                employee_id=employee.id,
                employee_name=employee.full_name,
                score=match.score,
            )
        return StepResult(Outcome.RETRY_PROMPT, score=match.score)

    def _notify_guest_arrival(self, session: AccessSession, employee_id: str) -> bool:
        employee = self.directory.require(employee_id)
        try:
            notify.send_direct(self.sink, employee, GUEST_WAITING_TEXT, now_ms=self.clock.now_ms())
        except (DispatchError, ValueError) as exc:
            self._end(session, SessionState.ERROR, f"guest notification failed: {exc}")
            return False
        session.employee_id = employee.id
        session.employee_name = employee.full_name
        self._end(session, SessionState.NOTIFIED)
        return True

    def confirm_guest(self, session: AccessSession, yes: bool) -> StepResult:
        """Resolve the confirmation prompt: yes notifies the candidate, no
        discards it and asks for a new utterance."""
        self._require(session, SessionKind.GUEST, SessionState.AWAITING_CONFIRMATION)
        candidate_id = session.candidate_id
        candidate_name = session.candidate_name
        session.candidate_id = None
        session.candidate_name = None
        session.candidate_score = None
        if not yes:
            session.state = SessionState.AWAITING_UTTERANCE
            return StepResult(Outcome.BACK_TO_UTTERANCE)
        if not self._notify_guest_arrival(session, candidate_id):
            return StepResult(Outcome.ERROR, reason=session.ended_reason)
        return StepResult(
            Outcome.GUEST_NOTIFIED, employee_id=candidate_id, employee_name=candidate_name
        )

    # -- delivery ------------------------------------------------------------

    def handle_delivery(self, session: AccessSession) -> StepResult:
        """One channel notice for the people handling deliveries. The door is
        not unlocked; deliveries are received in person."""
        self._require(session, SessionKind.DELIVERY, SessionState.NOTIFY_PENDING)
        try:
            notify.send_channel(
                self.sink,
                self.flow_cfg.delivery_channel,
                DELIVERY_TEXT,
                now_ms=self.clock.now_ms(),
            )
        except (DispatchError, ValueError) as exc:
            self._end(session, SessionState.ERROR, f"delivery notification failed: {exc}")
            return StepResult(Outcome.ERROR, reason=str(exc))
        self._end(session, SessionState.NOTIFIED)
        return StepResult(Outcome.DELIVERY_NOTIFIED)

    # -- timing ----------------------------------------------------------------

    def record_phase(self, session: AccessSession, phase: Phase, duration_ms: int) -> None:
        if not isinstance(phase, Phase):
            raise ValueError(f"unknown phase {phase!r}")
        if duration_ms < 0:
            raise ValueError("phase duration must be non-negative")
        session.phase_timings.append((phase, duration_ms))


@dataclass(frozen=True)
class TimingReport:
    phase_means_ms: dict
    total_mean_ms: float
    shares_pct: dict
    degenerate: bool


def timing_report(sessions) -> TimingReport:
    """Per-phase mean durations and percentage shares over sessions that
    recorded timings. Shares are fractions of the summed phase means, so
    they total 100 up to float rounding; an all-zero total is flagged
    instead of divided by."""
    totals: dict[Phase, int] = {}
    counts: dict[Phase, int] = {}
    session_totals = []
    for session in sessions:
        if not session.phase_timings:
            continue
        session_totals.append(sum(d for _, d in session.phase_timings))
        for phase, duration in session.phase_timings:
            totals[phase] = totals.get(phase, 0) + duration
            counts[phase] = counts.get(phase, 0) + 1
    phase_means = {p.value: totals[p] / counts[p] for p in totals}
    total_mean = sum(session_totals) / len(session_totals) if session_totals else 0.0
    mean_sum = sum(phase_means.values())
    if mean_sum > 0:
        shares = {name: 100.0 * mean / mean_sum for name, mean in phase_means.items()}
        degenerate = False
    else:
        shares = {}
        degenerate = True
    return TimingReport(
        phase_means_ms=phase_means,
        total_mean_ms=total_mean,
        shares_pct=shares,
        degenerate=degenerate,
    )
