"""Speech-to-text provider abstraction and transcript-to-name matching.

Speech recognition on proper names is unreliable, so the guest flow
never trusts a transcript verbatim: it is fuzzy-matched against every
employee name and the match score decides what happens next.

Decision bands over the 0..100 integer score:
    score > 80   notify the employee directly
    30..80       ask the guest to confirm the candidate
    score < 30   ask the guest to try again
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .directory import Directory, normalize_name
from .recognition import ScriptedMissError

NOTIFY_THRESHOLD = 80
RETRY_THRESHOLD = 30

# scripted audio buffers carry their lookup tag in the first bytes
AUDIO_TAG_LEN = 8


class Band(Enum):
    NOTIFY = "notify"
    CONFIRM = "confirm"
    RETRY = "retry"


@dataclass(frozen=True)
class NameMatch:
    employee_id: Optional[str]
    score: int
    band: Band


@dataclass(frozen=True)
class TranscriptionConfig:
    notify_threshold: int = NOTIFY_THRESHOLD
    retry_threshold: int = RETRY_THRESHOLD
    language_tag: str = "sv-SE"

    def __post_init__(self):
        if not (0 < self.retry_threshold < self.notify_threshold < 100):
            raise ValueError("thresholds must satisfy 0 < retry < notify < 100")


class SpeechProvider:
    """Speech-to-text backend interface. Implementations must be safe for
    concurrent sessions and must not keep audio bytes after returning."""

    def transcribe(self, audio: bytes) -> str:
        raise NotImplementedError


def audio_tag(audio: bytes) -> str:
    head = audio[:AUDIO_TAG_LEN]
    try:
        return head.decode("utf-8").rstrip(".")
    except UnicodeDecodeError:
        return ""


class ScriptedSpeechProvider(SpeechProvider):
    """Deterministic transcription keyed on the audio tag."""

    def __init__(self, entries: dict[str, str]):
        self._entries = dict(entries)

    @classmethod
    def from_script(cls, script: Sequence[dict]) -> "ScriptedSpeechProvider":
        """Build from JSON-shaped entries: {"audioTag": str, "transcript": str}."""
        entries = {}
        for i, item in enumerate(script):
            tag = item.get("audioTag")
            if not isinstance(tag, str) or not tag:
                raise ValueError(f"script entry {i}: audioTag must be a non-empty string")
            transcript = item.get("transcript")
            if not isinstance(transcript, str):
                raise ValueError(f"script entry {i}: transcript must be a string")
            entries[tag] = transcript
        return cls(entries)

    @classmethod
    def from_script_file(cls, path: str | Path) -> "ScriptedSpeechProvider":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_script(json.load(fh))

    def transcribe(self, audio: bytes) -> str:
        tag = audio_tag(audio)
        try:
            return self._entries[tag]
        except KeyError:
            raise ScriptedMissError(f"no scripted transcript for audio tag {tag!r}") from None


def transcribe(provider: SpeechProvider, audio: bytes) -> str:
    if not audio:
        raise ValueError("audio must be non-empty")
    return provider.transcribe(audio)


def _edit_distance(a: str, b: str) -> int:
    """Levenshtein distance, two-row dynamic programming."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(current[-1] + 1, previous[j] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def similarity(a: str, b: str) -> int:
    """Normalized edit-distance similarity on [0, 100].

    Both strings are put through the directory name normalization first.
    The raw ratio 100 * (1 - distance / max_len) is rounded half-up to an
    integer; two empty strings count as identical.
    """
    na, nb = normalize_name(a), normalize_name(b)
    longest = max(len(na), len(nb))
    if longest == 0:
        return 100
    distance = _edit_distance(na, nb)
    # distance never exceeds the longer length, so the ratio is in [0, 100]
    ratio = Fraction(100 * (longest - distance), longest)
    # round half-up, exactly: floor(ratio + 1/2)
    return int(ratio + Fraction(1, 2))


def band_for_score(score: int, cfg: TranscriptionConfig = TranscriptionConfig()) -> Band:
    if score > cfg.notify_threshold:
        return Band.NOTIFY
    if score < cfg.retry_threshold:
        return Band.RETRY
    return Band.CONFIRM


def match_name(
    transcript: str,
    directory: Directory,
    cfg: TranscriptionConfig = TranscriptionConfig(),
) -> NameMatch:
    """Best employee for a transcript: maximum similarity over all names,
    ties broken by earliest ingestion order. An empty directory yields an
    absent match in the retry band."""
    best_id: Optional[str] = None
    best_score = -1
    for record in directory:
        score = similarity(transcript, record.full_name)
        if score > best_score:
            best_id = record.id
            best_score = score
    if best_id is None:
        return NameMatch(None, 0, Band.RETRY)
    return NameMatch(best_id, best_score, band_for_score(best_score, cfg))
