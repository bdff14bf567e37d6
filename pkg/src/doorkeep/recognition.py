"""Face-comparison provider abstraction and the accept/reject decision.

A provider takes a decrypted probe image and answers with the
best-matching enrolled identity and a similarity percentage. The real
deployment would back this with a cloud face API; this repo ships the
provider interface plus a deterministic scripted implementation used by
tests and the replay harness. Providers never retain probe bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .directory import Directory

DEFAULT_ACCEPT_THRESHOLD = 90.0

# scripted probes/audio carry their lookup tag in the first bytes
TAG_LEN = 8


class ProviderUnavailableError(RuntimeError):
    """Transport failure or timeout talking to the comparison backend."""


class EmptyCollectionError(ValueError):
    """No enrolled identities to compare against."""


class ScriptedMissError(LookupError):
    """A scripted provider was asked about a probe it has no entry for."""


@dataclass(frozen=True)
class MatchResult:
    """Best-scoring identity for one probe. No identity means score 0."""

    employee_id: Optional[str]
    similarity: float

    def __post_init__(self):
        if not (0 <= self.similarity <= 100):
            raise ValueError(f"similarity {self.similarity} outside [0, 100]")
        if self.employee_id is None and self.similarity != 0:
            raise ValueError("no-match results must carry similarity 0")


@dataclass(frozen=True)
class RecognitionConfig:
    accept_threshold: float = DEFAULT_ACCEPT_THRESHOLD

    def __post_init__(self):
        if not (0 < self.accept_threshold < 100):
            raise ValueError("accept_threshold must be inside (0, 100)")


@dataclass(frozen=True)
class Decision:
    accepted: bool
    employee_id: Optional[str] = None

    @classmethod
    def accept(cls, employee_id: str) -> "Decision":
        return cls(True, employee_id)

    @classmethod
    def reject(cls) -> "Decision":
        return cls(False)


class FaceProvider:
    """Comparison backend interface.

    `search` returns the best match for the probe against the enrolled
    collection. Implementations must be safe to call from concurrent
    sessions and must not keep probe bytes after returning.
    """

    def search(self, probe: bytes) -> MatchResult:
        raise NotImplementedError


def tagged_bytes(tag: str, size: int = 16) -> bytes:
    """Build a synthetic probe/audio buffer carrying `tag` in its first
    TAG_LEN bytes, dot-padded. Tags must fit and not end in the filler."""
    raw = tag.encode("utf-8")
    if not raw or len(raw) > TAG_LEN:
        raise ValueError(f"tag must be 1..{TAG_LEN} bytes, got {tag!r}")
    if tag.endswith("."):
        raise ValueError("tags must not end with the '.' filler")
    return raw.ljust(max(size, TAG_LEN), b".")


def probe_tag(probe: bytes) -> str:
    """Scripted-lookup tag: the first TAG_LEN bytes, dot filler stripped,
    if they decode as text."""
    head = probe[:TAG_LEN]
    try:
        return head.decode("utf-8").rstrip(".")
    except UnicodeDecodeError:
        return ""


class ScriptedFaceProvider(FaceProvider):
    """Deterministic provider answering by probe tag.

    Unknown tags raise ScriptedMissError by default; with
    `unknown_is_no_match=True` they come back as a no-match instead,
    which is how an end-to-end test models garbage probes (for example
    a probe decrypted with the wrong key). Entries may simulate a
    backend outage (`error`) and a scripted call latency that is applied
    to an injected clock.
    """

    def __init__(self, entries: dict, unknown_is_no_match: bool = False, clock=None):
        self._entries = dict(entries)
        self._unknown_is_no_match = unknown_is_no_match
        self._clock = clock

    @classmethod
    def from_script(
        cls, script: Sequence[dict], unknown_is_no_match: bool = False, clock=None
    ) -> "ScriptedFaceProvider":
        """Build from JSON-shaped entries:
        {"probeTag": str, "employeeId": str|null, "similarity": number,
         "error"?: "unavailable", "latencyMs"?: int}
        """
        entries = {}
        for i, item in enumerate(script):
            tag = item.get("probeTag")
            if not isinstance(tag, str) or not tag:
                raise ValueError(f"script entry {i}: probeTag must be a non-empty string")
            if item.get("error"):
                entries[tag] = {"error": item["error"], "latency": int(item.get("latencyMs", 0))}
                continue
            similarity = float(item["similarity"])
            if not (0 <= similarity <= 100):
                raise ValueError(f"script entry {i}: similarity {similarity} outside [0, 100]")
            entries[tag] = {
                "employee_id": item.get("employeeId"),
                "similarity": similarity,
                "latency": int(item.get("latencyMs", 0)),
            }
        return cls(entries, unknown_is_no_match=unknown_is_no_match, clock=clock)

    @classmethod
    def from_script_file(cls, path: str | Path, **kwargs) -> "ScriptedFaceProvider":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_script(json.load(fh), **kwargs)

    def search(self, probe: bytes) -> MatchResult:
        entry = self._entries.get(probe_tag(probe))
        if entry is None:
            if self._unknown_is_no_match:
                return MatchResult(None, 0)
            raise ScriptedMissError(f"no scripted entry for probe tag {probe_tag(probe)!r}")
        if self._clock is not None and entry.get("latency"):
            self._clock.advance(entry["latency"])
        if entry.get("error"):
            raise ProviderUnavailableError(f"scripted outage: {entry['error']}")
        employee_id = entry["employee_id"]
        if employee_id is None:
            return MatchResult(None, 0)
        return MatchResult(employee_id, entry["similarity"])


def compare_probe(provider: FaceProvider, probe: bytes, collection: Directory) -> MatchResult:
    """Run one probe against the enrolled collection through `provider`."""
    if not probe:
        raise ValueError("probe must be non-empty")
    if len(collection) == 0:
        raise EmptyCollectionError("no enrolled employees to compare against")
    result = provider.search(probe)
    if result.employee_id is not None and collection.get(result.employee_id) is None:
        # a provider answering with an unenrolled id is treated as no match
        return MatchResult(None, 0)
    return result


def decide_access(result: MatchResult, cfg: RecognitionConfig) -> Decision:
    """Accept only a present identity whose similarity is strictly above
    the threshold; everything else is rejected."""
    if result.employee_id is not None and result.similarity > cfg.accept_threshold:
        return Decision.accept(result.employee_id)
    return Decision.reject()
