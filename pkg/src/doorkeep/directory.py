"""Employee directory and face-template store.

The directory is loaded once from newline-delimited JSON records (the
shape the company HR export produces: id, firstName, lastName,
notifyHandle, imageRefs) and is immutable afterwards. Ingestion order is
significant: name lookups resolve ties to the first occurrence.

The template store keeps reference face images per employee under a
root directory: content-addressed blobs plus one JSON manifest per
employee, rewritten atomically. Only images whose comparison score
strictly exceeds the update threshold are kept, and only the most
recent `retention_capacity` of those; older ones are overwritten.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .clocks import TickCounter

DEFAULT_RETENTION_CAPACITY = 10
DEFAULT_UPDATE_THRESHOLD = 99.5


class IngestionError(ValueError):
    """A directory record is malformed; carries the offending record index."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"record {index}: {reason}")
        self.index = index
        self.reason = reason


class DuplicateIdError(ValueError):
    """Two directory records share an id."""

    def __init__(self, employee_id: str, index: int):
        super().__init__(f"record {index}: duplicate employee id {employee_id!r}")
        self.employee_id = employee_id
        self.index = index


class UnknownEmployeeError(KeyError):
    """Template-store operation against an id not present in the directory."""


def normalize_name(name: str) -> str:
    """Canonical form shared by directory lookup and the guest name matcher:
    lowercase, trimmed, internal whitespace runs collapsed to one space."""
    return " ".join(name.lower().split())


@dataclass(frozen=True)
class TemplateRef:
    template_id: str
    stored_at: int
    source_score: float


@dataclass(frozen=True)
class EmployeeRecord:
    id: str
    full_name: str
    notify_handle: str
    template_ids: tuple[TemplateRef, ...] = ()

    def __post_init__(self):
        if not self.full_name.strip():
            raise ValueError(f"employee {self.id!r} has an empty full name")


@dataclass(frozen=True)
class DirectoryConfig:
    retention_capacity: int = DEFAULT_RETENTION_CAPACITY
    update_threshold: float = DEFAULT_UPDATE_THRESHOLD

    def __post_init__(self):
        if self.retention_capacity < 1:
            raise ValueError("retention_capacity must be >= 1")
        if not (0 < self.update_threshold < 100):
            raise ValueError("update_threshold must be inside (0, 100)")


class Directory:
    """Immutable, order-preserving set of employee records."""

    def __init__(self, records: Iterable[EmployeeRecord]):
        self._records: list[EmployeeRecord] = []
        self._by_id: dict[str, EmployeeRecord] = {}
        for index, record in enumerate(records):
            if record.id in self._by_id:
                raise DuplicateIdError(record.id, index)
            self._records.append(record)
            self._by_id[record.id] = record

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EmployeeRecord]:
        return iter(self._records)

    def get(self, employee_id: str) -> Optional[EmployeeRecord]:
        return self._by_id.get(employee_id)

    def require(self, employee_id: str) -> EmployeeRecord:
        record = self._by_id.get(employee_id)
        if record is None:
            raise UnknownEmployeeError(employee_id)
        return record


def _record_from_document(index: int, doc: dict) -> EmployeeRecord:
    if not isinstance(doc, dict):
        raise IngestionError(index, "document is not a JSON object")
    try:
        emp_id = doc["id"]
        first = doc["firstName"]
        last = doc["lastName"]
    except KeyError as exc:
        raise IngestionError(index, f"missing field {exc.args[0]!r}") from exc
    if not isinstance(emp_id, str) or not emp_id:
        raise IngestionError(index, "id must be a non-empty string")
    if not isinstance(first, str) or not isinstance(last, str):
        raise IngestionError(index, "firstName/lastName must be strings")
    full_name = f"{first} {last}".strip()
    if not full_name:
        raise IngestionError(index, "full name is empty")
    handle = doc.get("notifyHandle", "")
    if not isinstance(handle, str):
        raise IngestionError(index, "notifyHandle must be a string")
    image_refs = doc.get("imageRefs", [])
    if not isinstance(image_refs, list) or not all(isinstance(r, str) for r in image_refs):
        raise IngestionError(index, "imageRefs must be a list of strings")
    return EmployeeRecord(id=emp_id, full_name=full_name, notify_handle=handle)


def load_directory(documents: Iterable) -> Directory:
    """Build a directory from employee record documents (dicts or JSON lines).

    Input order is preserved and defines "first occurrence" for name
    lookups. Malformed documents and duplicate ids are rejected with the
    record index.
    """
    records = []
    seen: set[str] = set()
    for index, doc in enumerate(documents):
        if isinstance(doc, (str, bytes)):
            text = doc.strip()
            if not text:
                continue
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise IngestionError(index, f"invalid JSON: {exc}") from exc
        record = _record_from_document(index, doc)
        if record.id in seen:
            raise DuplicateIdError(record.id, index)
        seen.add(record.id)
        records.append(record)
    return Directory(records)


def load_directory_file(path: str | Path) -> Directory:
    """Load newline-delimited JSON employee records from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return load_directory(fh)


def lookup_first_by_name(directory: Directory, name: str) -> Optional[EmployeeRecord]:
    """First record (in ingestion order) whose normalized name equals the query."""
    wanted = normalize_name(name)
    for record in directory:
        if normalize_name(record.full_name) == wanted:
            return record
    return None


@dataclass(frozen=True)
class StoreOutcome:
    stored: bool
    ref: Optional[TemplateRef] = None

    @classmethod
    def stored_ref(cls, ref: TemplateRef) -> "StoreOutcome":
        return cls(stored=True, ref=ref)

    @classmethod
    def skipped(cls) -> "StoreOutcome":
        return cls(stored=False)


@dataclass
class _Manifest:
    # newest-last on disk; presented newest-first through list_templates
    entries: list[dict] = field(default_factory=list)


class TemplateStore:
    """Per-employee retention of the most recent high-confidence face images.

    Layout under `root`:
        blobs/<sha256>.bin            content-addressed image bytes
        manifests/<employee_id>.json  ordered template refs for one employee

    Manifests are rewritten via write-temp-then-rename so readers never
    observe a torn file. Writers are serialized per employee; readers
    take no lock.
    """

    def __init__(
        self,
        root: str | Path,
        directory: Directory,
        config: DirectoryConfig = DirectoryConfig(),
        ticks: Optional[TickCounter] = None,
    ):
        self.root = Path(root)
        self.directory = directory
        self.config = config
        self._ticks = ticks or TickCounter()
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        (self.root / "blobs").mkdir(parents=True, exist_ok=True)
        (self.root / "manifests").mkdir(parents=True, exist_ok=True)

    def _lock_for(self, employee_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks[employee_id]

    def _manifest_path(self, employee_id: str) -> Path:
        return self.root / "manifests" / f"{employee_id}.json"

    def _read_manifest(self, employee_id: str) -> _Manifest:
        path = self._manifest_path(employee_id)
        if not path.exists():
            return _Manifest()
        with open(path, "r", encoding="utf-8") as fh:
            return _Manifest(entries=json.load(fh))

    def _write_manifest(self, employee_id: str, manifest: _Manifest) -> None:
        path = self._manifest_path(employee_id)
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest.entries, fh, sort_keys=True)
        os.replace(tmp, path)

    def maybe_store_template(self, employee_id: str, image: bytes, score: float) -> StoreOutcome:
        """Keep `image` as a template only if `score` strictly exceeds the
        update threshold; beyond capacity the oldest template is overwritten.
        Skipped images are not retained anywhere."""
        self.directory.require(employee_id)
        if not (score > self.config.update_threshold):
            return StoreOutcome.skipped()

        digest = hashlib.sha256(image).hexdigest()
        ref = TemplateRef(template_id=digest, stored_at=self._ticks.next(), source_score=score)

        with self._lock_for(employee_id):
            blob_path = self.root / "blobs" / f"{digest}.bin"
            if not blob_path.exists():
                tmp = blob_path.with_suffix(".bin.tmp")
                tmp.write_bytes(image)
                os.replace(tmp, blob_path)

            manifest = self._read_manifest(employee_id)
            manifest.entries.append(
                {"templateId": ref.template_id, "storedAt": ref.stored_at, "sourceScore": score}
            )
            evicted = []
            while len(manifest.entries) > self.config.retention_capacity:
                evicted.append(manifest.entries.pop(0))  # oldest first
            self._write_manifest(employee_id, manifest)
            for entry in evicted:
                self._drop_blob_if_unreferenced(entry["templateId"])
        return StoreOutcome.stored_ref(ref)

    def _drop_blob_if_unreferenced(self, template_id: str) -> None:
        for manifest_file in (self.root / "manifests").glob("*.json"):
            with open(manifest_file, "r", encoding="utf-8") as fh:
                if any(e["templateId"] == template_id for e in json.load(fh)):
                    return
        blob = self.root / "blobs" / f"{template_id}.bin"
        if blob.exists():
            blob.unlink()

    def list_templates(self, employee_id: str) -> list[TemplateRef]:
        """Template refs for one employee, newest first."""
        self.directory.require(employee_id)
        manifest = self._read_manifest(employee_id)
        refs = [
            TemplateRef(
                template_id=e["templateId"],
                stored_at=e["storedAt"],
                source_score=e["sourceScore"],
            )
            for e in manifest.entries
        ]
        refs.sort(key=lambda r: r.stored_at, reverse=True)
        return refs
