"""Offline scenario replay.

A scenario file bundles a directory, scripted provider outputs, and an
ordered list of trials with expected outcomes. The runner stands up the
real controller server, a door client, and a notifier client over
loopback TCP, executes every trial through the actual wire protocol,
and aggregates a report: score separation (FAR/FRR plus a histogram),
per-phase timing means and shares, and per-name guest try counts.

Reports are deterministic: a fixed scenario and seed produce
byte-identical JSON. Time is simulated and advances only through
scripted latencies and a fixed inter-trial gap.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .clocks import SimulatedClock
from .crypto import CipherKey
from .directory import Directory, load_directory
from .doorunit import DoorUnitClient
from .flows import AccessController, FlowConfig, timing_report
from .notify import NotifierClient, RecordingSink
from .recognition import RecognitionConfig, ScriptedFaceProvider, tagged_bytes
from .server import ControllerServer, RemoteNotifierSink
from .transcription import Band, ScriptedSpeechProvider, TranscriptionConfig, match_name

HISTOGRAM_BIN_WIDTH = 2
TRIAL_GAP_MS = 30_000  # simulated lull between trials; keeps unlock windows disjoint
HARNESS_KEY = CipherKey(bytes(range(1, 33)))

TRIAL_KINDS = ("genuine", "impostor", "guest_native", "guest_nonnative")
_CODE_RE = re.compile(r"\b(\d{4})\b")


class ScenarioError(ValueError):
    """Scenario file is malformed; carries the offending trial index when
    one is known."""

    def __init__(self, reason: str, trial_index: Optional[int] = None):
        prefix = f"trial {trial_index}: " if trial_index is not None else ""
        super().__init__(prefix + reason)
        self.trial_index = trial_index


@dataclass(frozen=True)
class Trial:
    index: int
    kind: str
    probe_tag: Optional[str] = None
    expect: str = ""
    phases: dict = field(default_factory=dict)
    target_name: Optional[str] = None
    utterances: tuple = ()


@dataclass
class Scenario:
    directory_docs: list[dict]
    face_script: list[dict]
    speech_script: list[dict]
    accept_threshold: float
    trials: list[Trial]

    def directory(self) -> Directory:
        return load_directory(self.directory_docs)


def load_scenario(doc: dict) -> Scenario:
    """Validate a scenario document. Every trial must reference provider
    script entries that exist."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    face_script = [dict(e) for e in doc.get("faceScript", [])]
    speech_script = [dict(e) for e in doc.get("speechScript", [])]
    face_by_tag = {e.get("probeTag"): e for e in face_script}
    audio_tags = {e.get("audioTag") for e in speech_script}

    trials: list[Trial] = []
    for i, raw in enumerate(doc.get("trials", [])):
        if not isinstance(raw, dict):
            raise ScenarioError("trial must be an object", i)
        kind = raw.get("kind")
        if kind not in TRIAL_KINDS:
            raise ScenarioError(f"unknown trial kind {kind!r}", i)
        if kind in ("genuine", "impostor"):
            tag = raw.get("probeTag")
            if tag not in face_by_tag:
                raise ScenarioError(f"probeTag {tag!r} has no face script entry", i)
            phases = raw.get("phases", {})
            if not isinstance(phases, dict):
                raise ScenarioError("phases must be an object", i)
            if "cloudAuthMs" in phases:
                # surfaces as scripted provider latency so the controller
                # measures it through its own clock
                face_by_tag[tag]["latencyMs"] = int(phases["cloudAuthMs"])
            trials.append(
                Trial(
                    index=i,
                    kind=kind,
                    probe_tag=tag,
                    expect=raw.get("expect", "unlocked" if kind == "genuine" else "denied"),
                    phases=phases,
                )
            )
        else:
            utterances = raw.get("utterances", [])
            if not utterances:
                raise ScenarioError("guest trial needs at least one utterance", i)
            for utt in utterances:
                if utt.get("audioTag") not in audio_tags:
                    raise ScenarioError(
                        f"audioTag {utt.get('audioTag')!r} has no speech script entry", i
                    )
                if utt.get("confirm") not in (None, "yes", "no"):
                    raise ScenarioError("confirm must be yes/no/absent", i)
            trials.append(
                Trial(
                    index=i,
                    kind=kind,
                    expect=raw.get("expect", "notified"),
                    target_name=raw.get("targetName"),
                    utterances=tuple((u.get("audioTag"), u.get("confirm")) for u in utterances),
                )
            )
    return Scenario(
        directory_docs=doc.get("directory", []),
        face_script=face_script,
        speech_script=speech_script,
        accept_threshold=float(doc.get("acceptThreshold", 90)),
        trials=trials,
    )


def load_scenario_file(path: str | Path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(json.load(fh))


@dataclass
class Report:
    accept_threshold: float
    genuine_scores: list[float] = field(default_factory=list)
    impostor_scores: list[float] = field(default_factory=list)
    timing: Optional[dict] = None
    tries: dict = field(default_factory=dict)
    mismatches: list[dict] = field(default_factory=list)
    trials_run: int = 0

    @property
    def far(self) -> Optional[float]:
        """Fraction of impostor trials that got past the face gate."""
        if not self.impostor_scores:
            return None
        accepted = sum(1 for m in self.mismatches if m.get("class") == "false_accept")
        return accepted / len(self.impostor_scores)

    @property
    def frr(self) -> Optional[float]:
        """Fraction of genuine trials rejected at the face gate."""
        if not self.genuine_scores:
            return None
        rejected = sum(1 for m in self.mismatches if m.get("class") == "false_reject")
        return rejected / len(self.genuine_scores)

    def histogram(self, scores: list[float]) -> list[int]:
        bins = [0] * (100 // HISTOGRAM_BIN_WIDTH)
        for score in scores:
            bins[min(int(score // HISTOGRAM_BIN_WIDTH), len(bins) - 1)] += 1
        return bins

    def to_dict(self) -> dict:
        return {
            "acceptThreshold": self.accept_threshold,
            "trialsRun": self.trials_run,
            "genuine": {
                "count": len(self.genuine_scores),
                "scores": self.genuine_scores,
                "histogram": self.histogram(self.genuine_scores),
            },
            "impostor": {
                "count": len(self.impostor_scores),
                "scores": self.impostor_scores,
                "histogram": self.histogram(self.impostor_scores),
            },
            "histogramBinWidth": HISTOGRAM_BIN_WIDTH,
            "far": self.far,
            "frr": self.frr,
            "timing": self.timing,
            "tries": self.tries,
            "mismatches": self.mismatches,
        }


def report_render(report: Report, fmt: str = "text") -> str:
    """Serialize a report. JSON output is canonical (sorted keys), text is
    a human summary with one line per headline figure."""
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [f"scenario report ({report.trials_run} trials)"]
    if report.genuine_scores or report.impostor_scores:
        lines.append(f"  face threshold: {report.accept_threshold:g}")
        if report.genuine_scores:
            lines.append(
                f"  genuine trials: {len(report.genuine_scores)}"
                f" (scores {min(report.genuine_scores):g}..{max(report.genuine_scores):g})"
            )
        if report.impostor_scores:
            lines.append(
                f"  impostor trials: {len(report.impostor_scores)}"
                f" (scores {min(report.impostor_scores):g}..{max(report.impostor_scores):g})"
            )
        if report.far is not None:
            lines.append(f"  FAR: {report.far:.4f}")
        if report.frr is not None:
            lines.append(f"  FRR: {report.frr:.4f}")
    if report.timing is not None and not report.timing.get("degenerate"):
        lines.append(f"  mean door-to-unlock time: {report.timing['totalMeanMs']:g} ms")
        for phase, mean in sorted(report.timing["phaseMeansMs"].items()):
            share = report.timing["sharesPct"][phase]
            lines.append(f"    {phase}: {mean:g} ms ({share:.0f}%)")
    elif report.timing is not None:
        lines.append("  timing: degenerate (all-zero durations)")
    for group in ("native", "nonnative"):
        info = report.tries.get(group)
        if info:
            lines.append(
                f"  {group} speakers: {info['totalTries']} tries over {info['names']} names,"
                f" mean tries {info['meanTries']:.2f}"
            )
    lines.append(f"  mismatches: {len(report.mismatches)}")
    return "\n".join(lines) + "\n"


class _TrialRunner:
    """Drives one fully wired system (server + two clients) through a
    scenario's trials."""

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.clock = SimulatedClock(0)
        self.rng = random.Random(seed)
        self.recording = RecordingSink()
        directory = scenario.directory()

        face_provider = ScriptedFaceProvider.from_script(scenario.face_script, clock=self.clock)
        speech_provider = ScriptedSpeechProvider.from_script(scenario.speech_script)
        self.sink = RemoteNotifierSink(ack_timeout_s=10.0)
        self.controller = AccessController(
            directory=directory,
            face_provider=face_provider,
            speech_provider=speech_provider,
            sink=self.sink,
            cipher_key=HARNESS_KEY,
            clock=self.clock,
            rng=self.rng,
            recognition_cfg=RecognitionConfig(accept_threshold=self.scenario.accept_threshold),
            flow_cfg=FlowConfig(),
        )
        self.server = ControllerServer(self.controller, sink=self.sink)
        self.report = Report(accept_threshold=scenario.accept_threshold)
        self._face_by_tag = {e["probeTag"]: e for e in scenario.face_script}

    def run(self) -> Report:
        host, port = self.server.start()
        notifier = NotifierClient(host, port, self.recording)
        door = DoorUnitClient(host, port)
        try:
            for trial in self.scenario.trials:
                self.clock.advance(TRIAL_GAP_MS)
                if trial.kind in ("genuine", "impostor"):
                    self._run_face_trial(door, trial)
                else:
                    self._run_guest_trial(door, trial)
                self.report.trials_run += 1
        finally:
            door.close()
            notifier.close()
            self.server.stop()
        self._finalize()
        return self.report

    # -- individual trials ---------------------------------------------------

    def _mismatch(self, trial: Trial, expected: str, actual: str, cls: Optional[str] = None) -> None:
        entry = {"trial": trial.index, "kind": trial.kind, "expected": expected, "actual": actual}
        if cls:
            entry["class"] = cls
        self.report.mismatches.append(entry)

    def _abort(self, door: DoorUnitClient, session_id: str) -> None:
        door.report_error(session_id, "trial abandoned")

    def _run_face_trial(self, door: DoorUnitClient, trial: Trial) -> None:
        entry = self._face_by_tag[trial.probe_tag]
        score = float(entry.get("similarity", 0))
        scores = self.report.genuine_scores if trial.kind == "genuine" else self.report.impostor_scores
        scores.append(score)

        session_id = f"t{trial.index}"
        door.start_session(session_id, "employee")
        probe = tagged_bytes(trial.probe_tag)
        capture_ms = trial.phases.get("captureMs")
        door.upload_probe(session_id, probe, HARNESS_KEY, capture_ms)
        reply = door.next_message()

        if reply.type == "AUTH_RESULT":
            actual = "denied"
        elif reply.type == "CODE_CHALLENGE":
            actual = "challenge"
        else:
            self._mismatch(trial, trial.expect, f"protocol:{reply.type}")
            return

        if trial.kind == "impostor":
            if actual == "denied":
                if trial.expect != "denied":
                    self._mismatch(trial, trial.expect, "denied")
                return
            # the face gate let an impostor through
            self._mismatch(trial, "denied", "challenge issued", cls="false_accept")
            self._abort(door, session_id)
            return

        # genuine trial: expected to go all the way to an unlock
        if actual == "denied":
            self._mismatch(trial, "unlocked", "denied", cls="false_reject")
            return
        code = self._last_code()
        if code is None:
            self._mismatch(trial, "code notification", "none delivered")
            self._abort(door, session_id)
            return
        entry_ms = trial.phases.get("pinEntryMs")
        door.submit_code(session_id, code, entry_ms)
        result = door.next_message()
        if result.type != "CODE_RESULT" or result.payload.get("result") != "ok":
            self._mismatch(trial, "unlocked", f"{result.type}:{result.payload.get('result')}")
            return
        unlock = door.next_message()
        if unlock.type != "UNLOCK_EVENT":
            self._mismatch(trial, "unlock event", unlock.type)

    def _last_code(self) -> Optional[str]:
        directs = self.recording.directs()
        if not directs:
            return None
        found = _CODE_RE.search(directs[-1].text)
        return found.group(1) if found else None

    def _run_guest_trial(self, door: DoorUnitClient, trial: Trial) -> None:
        session_id = f"t{trial.index}"
        door.start_session(session_id, "guest")
        tries = 0
        outcome = None
        for audio_tag, confirm in trial.utterances:
            door.send_audio(session_id, tagged_bytes(audio_tag))
            tries += 1
            reply = door.next_message()
            if reply.type == "GUEST_RESULT" and reply.payload.get("outcome") == "notified":
                outcome = "notified"
                break
            if reply.type == "GUEST_MATCH" and reply.payload.get("band") == "confirm":
                if confirm is None:
                    self._mismatch(trial, "no confirmation prompt", "confirm requested")
                    self._abort(door, session_id)
                    return
                door.confirm(session_id, yes=confirm == "yes")
                answer = door.next_message()
                if answer.type == "GUEST_RESULT" and answer.payload.get("outcome") == "notified":
                    outcome = "notified"
                    break
                continue  # ask_again: next utterance
            if reply.type == "GUEST_MATCH" and reply.payload.get("band") == "retry":
                continue
            self._mismatch(trial, "guest flow reply", reply.type)
            self._abort(door, session_id)
            return
        if outcome != "notified":
            self._mismatch(trial, trial.expect, "utterances exhausted")
            self._abort(door, session_id)
            return
        if trial.expect != "notified":
            self._mismatch(trial, trial.expect, "notified")
        group = "native" if trial.kind == "guest_native" else "nonnative"
        name = trial.target_name or f"trial-{trial.index}"
        self.report.tries.setdefault(group, {"byName": {}})["byName"][name] = tries

    def _finalize(self) -> None:
        finished = self.controller.finished_sessions
        timed = [s for s in finished if s.phase_timings]
        if timed:
            tr = timing_report(timed)
            self.report.timing = {
                "phaseMeansMs": tr.phase_means_ms,
                "totalMeanMs": tr.total_mean_ms,
                "sharesPct": tr.shares_pct,
                "degenerate": tr.degenerate,
            }
        for group, info in self.report.tries.items():
            by_name = info["byName"]
            total = sum(by_name.values())
            info["totalTries"] = total
            info["names"] = len(by_name)
            # two-decimal figure truncated, not rounded: 50 tries over 33
            # names reads 1.51
            info["meanTries"] = (total * 100 // len(by_name)) / 100 if by_name else None


def run_scenario(scenario: Scenario, seed: int = 0) -> Report:
    """Execute every trial through the real flow and protocol stack over
    loopback, with scripted providers."""
    return _TrialRunner(scenario, seed).run()


# -- scenario generators ------------------------------------------------------


def _employee_doc(i: int) -> dict:
    first = ["Anna", "Bo", "Cilla", "David", "Elsa", "Filip", "Greta", "Hugo"][i % 8]
    last = ["Lindberg", "Ek", "Sund", "Berg", "Holm", "Dahl", "Falk", "Strand"][(i // 8) % 8]
    return {
        "id": f"e{i:03d}",
        "firstName": first,
        "lastName": f"{last}{i:03d}",
        "notifyHandle": f"@user{i:03d}",
    }


def make_separation_scenario(
    seed: int,
    n_genuine: int = 200,
    n_impostor: int = 200,
    genuine_range: tuple[float, float] = (94.25, 100.0),
    impostor_range: tuple[float, float] = (0.0, 73.1),
    n_employees: int = 40,
) -> Scenario:
    """Synthetic replay of the live separation test: genuine scores drawn
    uniformly from the observed genuine envelope and impostor scores from
    the impostor envelope, all routed through real employee sessions."""
    rng = random.Random(seed)
    directory = [_employee_doc(i) for i in range(n_employees)]
    face_script = []
    trials = []
    for g in range(n_genuine):
        tag = f"g{g:05d}"
        face_script.append(
            {
                "probeTag": tag,
                "employeeId": directory[g % n_employees]["id"],
                "similarity": round(rng.uniform(*genuine_range), 2),
            }
        )
        trials.append({"kind": "genuine", "probeTag": tag, "expect": "unlocked"})
    for i in range(n_impostor):
        tag = f"i{i:05d}"
        face_script.append(
            {
                "probeTag": tag,
                "employeeId": directory[i % n_employees]["id"],
                "similarity": round(rng.uniform(*impostor_range), 2),
            }
        )
        trials.append({"kind": "impostor", "probeTag": tag, "expect": "denied"})
    return load_scenario(
        {
            "directory": directory,
            "faceScript": face_script,
            "speechScript": [],
            "acceptThreshold": 90,
            "trials": trials,
        }
    )


def make_speech_tries_scenario(
    tries_per_native_name: Optional[list[int]] = None,
    tries_per_nonnative_name: Optional[list[int]] = None,
) -> Scenario:
    """Guest-flow replay with a fixed number of tries per name: each name
    needs (tries - 1) low-scoring utterances before an exact one. The
    defaults reproduce 37 tries over 33 names for native speakers and 50
    over 33 for non-native ones."""
    if tries_per_native_name is None:
        tries_per_native_name = [2] * 4 + [1] * 29  # 37 tries / 33 names
    if tries_per_nonnative_name is None:
        tries_per_nonnative_name = [3] * 8 + [2] * 1 + [1] * 24  # 50 tries / 33 names
    n_names = max(len(tries_per_native_name), len(tries_per_nonnative_name))
    directory_docs = [_employee_doc(i) for i in range(n_names)]
    directory = load_directory(directory_docs)
    records = list(directory)

    gibberish = "xyxyxyxyxyxyxyxyxyxyxyxy"
    probe = match_name(gibberish, directory, TranscriptionConfig())
    if probe.band is not Band.RETRY:
        raise AssertionError("generator self-check: gibberish utterance must band as retry")

    speech_script = [{"audioTag": "miss0000", "transcript": gibberish}]
    trials = []
    for group, tries_list in (("guest_native", tries_per_native_name), ("guest_nonnative", tries_per_nonnative_name)):
        for i, tries in enumerate(tries_list):
            record = records[i]
            hit_tag = f"{group[6]}h{i:04d}"  # unique per group+name
            speech_script.append({"audioTag": hit_tag, "transcript": record.full_name})
            utterances = [{"audioTag": "miss0000"}] * (tries - 1) + [{"audioTag": hit_tag}]
            trials.append(
                {
                    "kind": group,
                    "targetName": record.full_name,
                    "utterances": utterances,
                    "expect": "notified",
                }
            )
    return load_scenario(
        {
            "directory": directory_docs,
            "faceScript": [],
            "speechScript": speech_script,
            "acceptThreshold": 90,
            "trials": trials,
        }
    )
