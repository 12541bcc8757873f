"""Storage backend abstraction.

A repository lives under one root directory regardless of backend; the file
``obk-meta.json`` inside it stamps the structure version and names the
backend, so :func:`open_repository` can dispatch without being told.

Writes are serialized per partition: every mutating operation takes an
in-process mutex plus a cross-process advisory file lock under
``root/.locks/``, so the acquisition server and offline CLI tools can share
a repository. Readers need no lock; backends only publish committed state.
"""

from __future__ import annotations

import hashlib
import json
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from filelock import FileLock

from .. import codec
from ..errors import (
    AlreadyExists,
    DigestMismatch,
    InvalidRecord,
    NotARepository,
    ReadOnlyRepository,
    RepositoryVersionError,
)
from ..model import (
    Comment,
    CommentDraft,
    EnvelopeKind,
    IsInfo,
    MrsMessage,
    RunHeader,
    RunStatus,
    TimestampMs,
    is_valid_partition,
)

REPOSITORY_VERSION = 1
META_FILENAME = "obk-meta.json"
EXPORT_HEADER = b"obk-export v1\n"


class BackendId(str, Enum):
    FILE = "file"
    RELATIONAL = "relational"


@dataclass(frozen=True)
class RepositoryHandle:
    backend: BackendId
    root: Path
    writable: bool


@dataclass(frozen=True)
class StoredRecord:
    """One record inside a run with its per-run insertion sequence."""

    seq: int
    body: object  # MrsMessage | IsInfo | Comment

    @property
    def timestamp(self) -> TimestampMs:
        b = self.body
        return b.created_at if isinstance(b, Comment) else b.timestamp


@dataclass(frozen=True)
class RunDetail:
    header: RunHeader
    mrs: tuple[StoredRecord, ...]
    is_objects: tuple[StoredRecord, ...]
    comments: tuple[StoredRecord, ...]


@dataclass(frozen=True)
class OrphanRecord:
    seq: int
    kind: EnvelopeKind
    body: object


@dataclass(frozen=True)
class UserRecord:
    username: str
    password_hash: str
    role: str


class _PartitionLocks:
    """Pairs a per-partition threading lock with an advisory file lock."""

    def __init__(self, root: Path):
        self._dir = root / ".locks"
        self._mutex = threading.Lock()
        self._locks: dict[str, threading.RLock] = {}
        self._filelocks: dict[str, FileLock] = {}

    class _Held:
        def __init__(self, tlock, flock):
            self._tlock = tlock
            self._flock = flock

        def __enter__(self):
            self._tlock.acquire()
            try:
                self._flock.acquire()
            except BaseException:
                self._tlock.release()
                raise
            return self

        def __exit__(self, *exc):
            self._flock.release()
            self._tlock.release()

    def held(self, name: str) -> "_PartitionLocks._Held":
        with self._mutex:
            tlock = self._locks.get(name)
            if tlock is None:
                self._dir.mkdir(exist_ok=True)
                tlock = threading.RLock()
                self._locks[name] = tlock
                self._filelocks[name] = FileLock(str(self._dir / f"{name}.lock"))
            return self._Held(tlock, self._filelocks[name])


class Repository(ABC):
    """One open repository; all operations are implemented by both backends."""

    def __init__(self, handle: RepositoryHandle):
        self.handle = handle
        self._locks = _PartitionLocks(handle.root)

    # -- run lifecycle --

    @abstractmethod
    def begin_run(self, header: RunHeader) -> None:
        """Register a new open run. Header status must be Open."""

    @abstractmethod
    def end_run(
        self,
        partition: str,
        run_number: int,
        status: RunStatus,
        num_events: int,
        end_time: TimestampMs,
    ) -> RunHeader:
        """Close an open run; the header is immutable afterwards except for
        comment appends."""

    def force_close(
        self, partition: str, run_number: int, end_time: Optional[TimestampMs] = None
    ) -> RunHeader:
        """Close a dangling run as Bad, keeping its current event count.

        Recovery tool for runs whose end-of-run message never arrived.
        """
        from ..model import now_ms

        detail = self.get_run_detail(partition, run_number)
        if end_time is None:
            end_time = max(now_ms(), detail.header.start_time)
        return self.end_run(
            partition, run_number, RunStatus.BAD, detail.header.num_events, end_time
        )

    # -- record appends --

    @abstractmethod
    def append_mrs(self, partition: str, run_number: int, m: MrsMessage) -> int:
        """Append a log message to an open run; returns the record sequence."""

    @abstractmethod
    def append_is(self, partition: str, run_number: int, i: IsInfo) -> int:
        """Append a status object to an open run; returns the record sequence."""

    @abstractmethod
    def append_comment(
        self,
        partition: str,
        run_number: int,
        draft: CommentDraft,
        blobs: Optional[dict[str, bytes]] = None,
    ) -> int:
        """Append a comment to an open or closed run; returns the comment id.

        ``blobs`` maps attachment digest to content; every declared attachment
        must have a matching blob.
        """

    @abstractmethod
    def append_orphan(self, partition: str, kind: EnvelopeKind, body: object) -> int:
        """Store a data record that arrived with no open run."""

    # -- reads --

    @abstractmethod
    def list_partitions(self) -> list[str]:
        """Sorted partition names."""

    @abstractmethod
    def list_run_headers(self, partition: Optional[str] = None) -> list[RunHeader]:
        """Headers ordered by (partition, run_number) ascending."""

    @abstractmethod
    def get_run_detail(self, partition: str, run_number: int) -> RunDetail:
        """Header plus all records in arrival order."""

    @abstractmethod
    def get_open_run(self, partition: str) -> Optional[int]:
        pass

    @abstractmethod
    def get_attachment(self, digest: str) -> bytes:
        pass

    @abstractmethod
    def find_attachment_meta(self, digest: str):
        """First-stored Attachment metadata for a digest, or None."""

    @abstractmethod
    def list_orphans(self, partition: str) -> list[OrphanRecord]:
        pass

    # -- users --

    @abstractmethod
    def put_user(self, user: UserRecord) -> None:
        pass

    @abstractmethod
    def get_user(self, username: str) -> Optional[UserRecord]:
        pass

    @abstractmethod
    def list_users(self) -> list[UserRecord]:
        pass

    @abstractmethod
    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- shared guards --

    def _require_writable(self) -> None:
        if not self.handle.writable:
            raise ReadOnlyRepository(f"repository {self.handle.root} opened read-only")

    @staticmethod
    def _check_open_header(header: RunHeader) -> None:
        from ..model import validate_header

        if header.status is not RunStatus.OPEN:
            raise InvalidRecord("begin_run requires an Open header")
        violations = validate_header(header)
        if violations:
            raise InvalidRecord(f"invalid run header: {', '.join(violations)}")

    @staticmethod
    def _check_close(
        start_time: TimestampMs, status: RunStatus, num_events: int, end_time: TimestampMs
    ) -> None:
        if status not in (RunStatus.GOOD, RunStatus.BAD):
            raise InvalidRecord("close status must be Good or Bad")
        if num_events < 0:
            raise InvalidRecord("num_events must be non-negative")
        if end_time < start_time:
            raise InvalidRecord("end_time precedes start_time")

    @staticmethod
    def _check_comment(draft: CommentDraft, blobs: dict[str, bytes]) -> None:
        if draft.is_empty():
            raise InvalidRecord("comment needs text or at least one attachment")
        for att in draft.attachments:
            content = blobs.get(att.digest)
            if content is None:
                raise DigestMismatch(f"no content supplied for digest {att.digest}")
            actual = hashlib.sha256(content).hexdigest()
            if actual != att.digest:
                raise DigestMismatch(
                    f"attachment {att.filename!r}: declared digest {att.digest} "
                    f"but content hashes to {actual}"
                )
            if len(content) != att.size_bytes:
                raise DigestMismatch(
                    f"attachment {att.filename!r}: declared {att.size_bytes} bytes "
                    f"but content is {len(content)} bytes"
                )


def blob_digest(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


# --- creation and opening ---------------------------------------------------

def _write_meta(root: Path, backend: BackendId) -> None:
    meta = {"obk": "repository", "version": REPOSITORY_VERSION, "backend": backend.value}
    (root / META_FILENAME).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def read_meta(root: Path) -> dict:
    meta_path = Path(root) / META_FILENAME
    if not meta_path.is_file():
        raise NotARepository(f"{root} does not contain {META_FILENAME}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise NotARepository(f"unreadable {META_FILENAME} in {root}: {exc}") from exc
    if meta.get("version") != REPOSITORY_VERSION:
        raise RepositoryVersionError(
            f"repository version {meta.get('version')!r} is not supported "
            f"(this build understands version {REPOSITORY_VERSION})"
        )
    return meta


def create_repository(backend: BackendId, root, **backend_options) -> Repository:
    """Initialize an empty, version-stamped repository at ``root``.

    ``root`` must not exist or must be an empty directory.
    """
    backend = BackendId(backend)
    root = Path(root)
    if root.exists():
        if not root.is_dir():
            raise AlreadyExists(f"{root} exists and is not a directory")
        if any(root.iterdir()):
            raise AlreadyExists(f"{root} is not empty")
    else:
        root.mkdir(parents=True)
    _write_meta(root, backend)
    if backend is BackendId.FILE:
        from .filestore import FileStoreRepository

        return FileStoreRepository(RepositoryHandle(backend, root, True), create=True, **backend_options)
    from .relational import RelationalRepository

    return RelationalRepository(RepositoryHandle(backend, root, True), create=True, **backend_options)


def open_repository(root, writable: bool = True, **backend_options) -> Repository:
    """Open an existing repository, dispatching on its stamped backend."""
    root = Path(root)
    meta = read_meta(root)
    backend = BackendId(meta["backend"])
    handle = RepositoryHandle(backend, root, writable)
    if backend is BackendId.FILE:
        from .filestore import FileStoreRepository

        return FileStoreRepository(handle, **backend_options)
    from .relational import RelationalRepository

    return RelationalRepository(handle, **backend_options)


# --- canonical export -------------------------------------------------------

def export_canonical(repo: Repository) -> bytes:
    """Deterministic serialization of the whole repository.

    Identical ingest streams produce byte-identical exports from either
    backend: partitions sorted, runs by number, records merged and sorted by
    (timestamp, insertion sequence). Used as the backend-equivalence oracle.
    """
    out = [EXPORT_HEADER]
    for partition in repo.list_partitions():
        headers = repo.list_run_headers(partition)
        for header in headers:
            detail = repo.get_run_detail(partition, header.run_number)
            out.append(_export_line("run", partition, header.run_number,
                                    codec.encode_run_header(detail.header)))
            merged = sorted(
                [("mrs", r) for r in detail.mrs]
                + [("is", r) for r in detail.is_objects]
                + [("comment", r) for r in detail.comments],
                key=lambda kr: (kr[1].timestamp, kr[1].seq),
            )
            for rectype, rec in merged:
                if rectype == "mrs":
                    body = codec.encode_mrs(rec.body)
                elif rectype == "is":
                    body = codec.encode_is(rec.body)
                else:
                    body = codec.encode_comment(rec.body)
                out.append(
                    _export_line(rectype, partition, header.run_number, body, seq=rec.seq)
                )
        for orphan in repo.list_orphans(partition):
            if isinstance(orphan.body, MrsMessage):
                body = codec.encode_mrs(orphan.body)
            elif isinstance(orphan.body, IsInfo):
                body = codec.encode_is(orphan.body)
            else:
                body = codec.encode_comment(orphan.body)
            out.append(
                _export_line(
                    "orphan", partition, None, body,
                    seq=orphan.seq, kind=orphan.kind.value,
                )
            )
    return b"".join(out)


def _export_line(rectype, partition, run_number, body, seq=None, kind=None) -> bytes:
    obj = {"type": rectype, "partition": partition}
    if run_number is not None:
        obj["run_number"] = run_number
    if seq is not None:
        obj["seq"] = seq
    if kind is not None:
        obj["kind"] = kind
    obj["record"] = body
    return codec.canonical_json(obj).encode("utf-8") + b"\n"
