"""Embedded relational backend on sqlite3.

The database lives at <root>/obk.db next to the repository meta file. One
connection serves all threads, serialized by a lock; every write op is a
single transaction. Two commit modes are supported:

    durable   synchronous=FULL, the commit reaches disk before the call
              returns (the default; acknowledged records survive a kill)
    buffered  synchronous=OFF, commits are left to the OS page cache

Run numbers stay unique per partition through a UNIQUE constraint, and the
open-run check is an indexed lookup, so starting a run costs the same no
matter how many runs are stored.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from importlib import resources
from pathlib import Path
from typing import Optional

from .. import codec
from ..errors import (
    AlreadyOpen,
    DuplicateRun,
    InvalidRecord,
    NotOpen,
    RepositoryVersionError,
    RunClosed,
    StorageError,
    UnknownRun,
)
from ..model import (
    Attachment,
    Comment,
    CommentDraft,
    CommentOrigin,
    EnvelopeKind,
    IsInfo,
    MrsMessage,
    RunHeader,
    RunStatus,
    Scalar,
    ScalarTag,
    Severity,
)
from .base import (
    OrphanRecord,
    Repository,
    RepositoryHandle,
    RunDetail,
    StoredRecord,
    UserRecord,
)

DB_FILENAME = "obk.db"

COMMIT_MODES = ("durable", "buffered")


def _schema_sql() -> str:
    return resources.files("obk.storage").joinpath("schema_v1.sql").read_text("utf-8")


class RelationalRepository(Repository):
    def __init__(self, handle: RepositoryHandle, create: bool = False,
                 commit_mode: str = "durable"):
        super().__init__(handle)
        if commit_mode not in COMMIT_MODES:
            raise StorageError(f"unknown commit mode {commit_mode!r}")
        self.commit_mode = commit_mode
        path = Path(handle.root) / DB_FILENAME
        if not create and not path.exists():
            raise StorageError(f"repository database {path} is missing")
        self._db_lock = threading.RLock()
        self._conn = sqlite3.connect(path, check_same_thread=False, isolation_level=None)
        self._conn.execute("PRAGMA foreign_keys = ON")
        sync = "FULL" if commit_mode == "durable" else "OFF"
        self._conn.execute(f"PRAGMA synchronous = {sync}")
        if create:
            # executescript force-commits any open transaction, so run it in
            # autocommit mode rather than inside _txn.
            with self._db_lock:
                self._conn.executescript(_schema_sql())
                self._conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', '1')"
                )
        else:
            try:
                row = self._conn.execute(
                    "SELECT value FROM meta WHERE key = 'schema_version'"
                ).fetchone()
            except sqlite3.Error as exc:
                raise RepositoryVersionError(f"database {path} has no schema marker") from exc
            if row is None or row[0] != "1":
                raise RepositoryVersionError(
                    f"database {path} has unsupported schema version {row and row[0]!r}"
                )

    def close(self) -> None:
        with self._db_lock:
            self._conn.close()

    class _Txn:
        def __init__(self, repo: "RelationalRepository"):
            self.repo = repo

        def __enter__(self) -> sqlite3.Connection:
            self.repo._db_lock.acquire()
            self.repo._conn.execute("BEGIN IMMEDIATE")
            return self.repo._conn

        def __exit__(self, exc_type, exc, tb) -> None:
            try:
                if exc_type is None:
                    self.repo._conn.execute("COMMIT")
                else:
                    self.repo._conn.execute("ROLLBACK")
            finally:
                self.repo._db_lock.release()

    def _txn(self) -> "_Txn":
        return self._Txn(self)

    def _read(self, sql: str, args: tuple = ()) -> list[tuple]:
        with self._db_lock:
            return self._conn.execute(sql, args).fetchall()

    # -- run lifecycle --

    def begin_run(self, header: RunHeader) -> None:
        self._require_writable()
        self._check_open_header(header)
        with self._locks.held(header.partition), self._txn() as c:
            row = c.execute(
                "SELECT run_number FROM runs WHERE partition = ? AND status = 'Open'",
                (header.partition,),
            ).fetchone()
            if row is not None:
                raise AlreadyOpen(
                    f"partition {header.partition!r} already has open run {row[0]}"
                )
            try:
                c.execute(
                    "INSERT INTO runs (partition, run_number, start_time_ms, end_time_ms,"
                    " status, num_events, max_events, trigger_type, beam_type, detector_mask)"
                    " VALUES (?, ?, ?, NULL, 'Open', ?, ?, ?, ?, ?)",
                    (
                        header.partition,
                        header.run_number,
                        header.start_time,
                        header.num_events,
                        header.max_events,
                        header.trigger_type,
                        header.beam_type,
                        header.detector_mask,
                    ),
                )
            except sqlite3.IntegrityError as exc:
                raise DuplicateRun(
                    f"run {header.run_number} already exists in partition"
                    f" {header.partition!r}"
                ) from exc

    def _run_row(self, c, partition: str, run_number: int) -> tuple:
        row = c.execute(
            "SELECT run_id, status FROM runs WHERE partition = ? AND run_number = ?",
            (partition, run_number),
        ).fetchone()
        if row is None:
            raise UnknownRun(f"no run {run_number} in partition {partition!r}")
        return row

    def _open_run_row(self, c, partition: str, run_number: int) -> int:
        run_id, status = self._run_row(c, partition, run_number)
        if status != RunStatus.OPEN.value:
            raise RunClosed(f"run {run_number} in partition {partition!r} is closed")
        return run_id

    def end_run(self, partition, run_number, status, num_events, end_time) -> RunHeader:
        self._require_writable()
        with self._locks.held(partition), self._txn() as c:
            run_id, row_status = self._run_row(c, partition, run_number)
            if row_status != RunStatus.OPEN.value:
                raise NotOpen(f"run {run_number} in partition {partition!r} is closed")
            start_time = c.execute(
                "SELECT start_time_ms FROM runs WHERE run_id = ?", (run_id,)
            ).fetchone()[0]
            self._check_close(start_time, status, num_events, end_time)
            c.execute(
                "UPDATE runs SET status = ?, num_events = ?, end_time_ms = ?"
                " WHERE run_id = ?",
                (status.value, num_events, end_time, run_id),
            )
            return self._header_by_id(c, run_id)

    def _header_by_id(self, c, run_id: int) -> RunHeader:
        row = c.execute(
            "SELECT partition, run_number, start_time_ms, end_time_ms, status,"
            " num_events, max_events, trigger_type, beam_type, detector_mask"
            " FROM runs WHERE run_id = ?",
            (run_id,),
        ).fetchone()
        return _header_from_row(row)

    # -- appends --

    def _next_seq(self, c, run_id: int) -> int:
        seq = c.execute(
            "SELECT next_record_seq FROM runs WHERE run_id = ?", (run_id,)
        ).fetchone()[0]
        c.execute(
            "UPDATE runs SET next_record_seq = ? WHERE run_id = ?", (seq + 1, run_id)
        )
        return seq

    def append_mrs(self, partition, run_number, m: MrsMessage) -> int:
        self._require_writable()
        with self._locks.held(partition), self._txn() as c:
            run_id = self._open_run_row(c, partition, run_number)
            seq = self._next_seq(c, run_id)
            c.execute(
                "INSERT INTO mrs_messages (run_id, record_seq, message_name, severity,"
                " application, text, timestamp_ms, qualifiers)"
                " VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                (
                    run_id,
                    seq,
                    m.message_name,
                    m.severity.value,
                    m.application,
                    m.text,
                    m.timestamp,
                    json.dumps(list(m.qualifiers), ensure_ascii=False),
                ),
            )
            return seq

    def append_is(self, partition, run_number, i: IsInfo) -> int:
        self._require_writable()
        with self._locks.held(partition), self._txn() as c:
            run_id = self._open_run_row(c, partition, run_number)
            seq = self._next_seq(c, run_id)
            c.execute(
                "INSERT INTO is_objects (run_id, record_seq, server, object_name,"
                " class_name, timestamp_ms) VALUES (?, ?, ?, ?, ?, ?)",
                (run_id, seq, i.server, i.object_name, i.class_name, i.timestamp),
            )
            is_id = c.execute("SELECT last_insert_rowid()").fetchone()[0]
            for position, (name, sc) in enumerate(i.attributes, start=1):
                c.execute(
                    "INSERT INTO is_attributes (is_id, position, name, value_tag,"
                    " elem_tag, value_int, value_float, value_bool, value_text,"
                    " value_time_ms, value_list)"
                    " VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                    (is_id, position, name) + _scalar_columns(sc),
                )
            return seq

    def append_comment(self, partition, run_number, draft: CommentDraft, blobs=None) -> int:
        self._require_writable()
        blobs = blobs or {}
        self._check_comment(draft, blobs)
        with self._locks.held(partition), self._txn() as c:
            run_id, _ = self._run_row(c, partition, run_number)
            seq = self._next_seq(c, run_id)
            comment_id = c.execute(
                "SELECT next_comment_id FROM runs WHERE run_id = ?", (run_id,)
            ).fetchone()[0]
            c.execute(
                "UPDATE runs SET next_comment_id = ? WHERE run_id = ?",
                (comment_id + 1, run_id),
            )
            comment = draft.with_id(comment_id)
            c.execute(
                "INSERT INTO comments (run_id, record_seq, comment_id, author,"
                " created_at_ms, text, origin) VALUES (?, ?, ?, ?, ?, ?, ?)",
                (
                    run_id,
                    seq,
                    comment.comment_id,
                    comment.author,
                    comment.created_at,
                    comment.text,
                    comment.origin.value,
                ),
            )
            comment_pk = c.execute("SELECT last_insert_rowid()").fetchone()[0]
            for position, att in enumerate(comment.attachments, start=1):
                c.execute(
                    "INSERT OR IGNORE INTO attachment_blobs (digest, content)"
                    " VALUES (?, ?)",
                    (att.digest, blobs[att.digest]),
                )
                c.execute(
                    "INSERT INTO attachments (comment_pk, position, filename,"
                    " media_type, size_bytes, digest) VALUES (?, ?, ?, ?, ?, ?)",
                    (comment_pk, position, att.filename, att.media_type,
                     att.size_bytes, att.digest),
                )
            return comment_id

    def append_orphan(self, partition, kind: EnvelopeKind, body) -> int:
        self._require_writable()
        with self._locks.held(partition), self._txn() as c:
            row = c.execute(
                "SELECT COALESCE(MAX(orphan_seq), 0) FROM orphan_records"
                " WHERE partition = ?",
                (partition,),
            ).fetchone()
            seq = row[0] + 1
            c.execute(
                "INSERT INTO orphan_records (partition, orphan_seq, kind, record)"
                " VALUES (?, ?, ?, ?)",
                (partition, seq, kind.value, codec.canonical_json(_encode_body(body))),
            )
            return seq

    # -- reads --

    def list_partitions(self) -> list[str]:
        rows = self._read(
            "SELECT partition FROM runs UNION SELECT partition FROM orphan_records"
            " ORDER BY partition"
        )
        return [r[0] for r in rows]

    def list_run_headers(self, partition: Optional[str] = None) -> list[RunHeader]:
        sql = (
            "SELECT partition, run_number, start_time_ms, end_time_ms, status,"
            " num_events, max_events, trigger_type, beam_type, detector_mask FROM runs"
        )
        if partition is not None:
            rows = self._read(
                sql + " WHERE partition = ? ORDER BY partition, run_number", (partition,)
            )
        else:
            rows = self._read(sql + " ORDER BY partition, run_number")
        return [_header_from_row(r) for r in rows]

    def get_run_detail(self, partition: str, run_number: int) -> RunDetail:
        with self._db_lock:
            run_id, _ = self._run_row(self._conn, partition, run_number)
            header = self._header_by_id(self._conn, run_id)
            mrs = tuple(
                StoredRecord(seq, MrsMessage(
                    message_name=name,
                    severity=Severity(severity),
                    application=application,
                    text=text,
                    timestamp=ts,
                    qualifiers=tuple(json.loads(quals)),
                ))
                for seq, name, severity, application, text, ts, quals in self._conn.execute(
                    "SELECT record_seq, message_name, severity, application, text,"
                    " timestamp_ms, qualifiers FROM mrs_messages WHERE run_id = ?"
                    " ORDER BY record_seq",
                    (run_id,),
                )
            )
            is_objects = []
            for is_id, seq, server, object_name, class_name, ts in self._conn.execute(
                "SELECT is_id, record_seq, server, object_name, class_name,"
                " timestamp_ms FROM is_objects WHERE run_id = ? ORDER BY record_seq",
                (run_id,),
            ).fetchall():
                attributes = tuple(
                    (row[0], _scalar_from_columns(row[1:]))
                    for row in self._conn.execute(
                        "SELECT name, value_tag, elem_tag, value_int, value_float,"
                        " value_bool, value_text, value_time_ms, value_list"
                        " FROM is_attributes WHERE is_id = ? ORDER BY position",
                        (is_id,),
                    )
                )
                is_objects.append(StoredRecord(seq, IsInfo(
                    server=server,
                    object_name=object_name,
                    class_name=class_name,
                    attributes=attributes,
                    timestamp=ts,
                )))
            comments = []
            for comment_pk, seq, comment_id, author, created_at, text, origin in (
                self._conn.execute(
                    "SELECT comment_pk, record_seq, comment_id, author, created_at_ms,"
                    " text, origin FROM comments WHERE run_id = ? ORDER BY record_seq",
                    (run_id,),
                ).fetchall()
            ):
                attachments = tuple(
                    Attachment(*row)
                    for row in self._conn.execute(
                        "SELECT filename, media_type, size_bytes, digest"
                        " FROM attachments WHERE comment_pk = ? ORDER BY position",
                        (comment_pk,),
                    )
                )
                comments.append(StoredRecord(seq, Comment(
                    comment_id=comment_id,
                    author=author,
                    created_at=created_at,
                    text=text,
                    origin=CommentOrigin(origin),
                    attachments=attachments,
                )))
            return RunDetail(header, mrs, tuple(is_objects), tuple(comments))

    def get_open_run(self, partition: str) -> Optional[int]:
        rows = self._read(
            "SELECT run_number FROM runs WHERE partition = ? AND status = 'Open'",
            (partition,),
        )
        return rows[0][0] if rows else None

    def get_attachment(self, digest: str) -> bytes:
        rows = self._read(
            "SELECT content FROM attachment_blobs WHERE digest = ?", (digest,)
        )
        if not rows:
            raise UnknownRun(f"no attachment with digest {digest}")
        return rows[0][0]

    def find_attachment_meta(self, digest: str) -> Optional[Attachment]:
        rows = self._read(
            "SELECT filename, media_type, size_bytes, digest FROM attachments"
            " WHERE digest = ? ORDER BY attachment_id LIMIT 1",
            (digest,),
        )
        return Attachment(*rows[0]) if rows else None

    def list_orphans(self, partition: str) -> list[OrphanRecord]:
        orphans = []
        for seq, kind_name, record in self._read(
            "SELECT orphan_seq, kind, record FROM orphan_records WHERE partition = ?"
            " ORDER BY orphan_seq",
            (partition,),
        ):
            kind = EnvelopeKind(kind_name)
            orphans.append(OrphanRecord(seq, kind, _parse_body(kind, json.loads(record))))
        return orphans

    # -- users --

    def put_user(self, user: UserRecord) -> None:
        self._require_writable()
        with self._txn() as c:
            c.execute(
                "INSERT INTO users (username, password_hash, role) VALUES (?, ?, ?)"
                " ON CONFLICT (username) DO UPDATE"
                " SET password_hash = excluded.password_hash, role = excluded.role",
                (user.username, user.password_hash, user.role),
            )

    def get_user(self, username: str) -> Optional[UserRecord]:
        rows = self._read(
            "SELECT username, password_hash, role FROM users WHERE username = ?",
            (username,),
        )
        return UserRecord(*rows[0]) if rows else None

    def list_users(self) -> list[UserRecord]:
        return [
            UserRecord(*row)
            for row in self._read(
                "SELECT username, password_hash, role FROM users ORDER BY username"
            )
        ]

    # -- integrity --

    def audit(self) -> list[str]:
        """Run referential-integrity checks; returns problem descriptions."""
        problems = []
        with self._db_lock:
            for row in self._conn.execute("PRAGMA foreign_key_check"):
                problems.append(f"foreign key violation in {row[0]} rowid {row[1]}")
            for (count,) in self._conn.execute(
                "SELECT COUNT(*) FROM attachment_blobs WHERE digest NOT IN"
                " (SELECT digest FROM attachments)"
            ):
                if count:
                    problems.append(f"{count} unreferenced attachment blobs")
        return problems


def _header_from_row(row: tuple) -> RunHeader:
    (partition, run_number, start_ms, end_ms, status, num_events, max_events,
     trigger_type, beam_type, detector_mask) = row
    return RunHeader(
        partition=partition,
        run_number=run_number,
        start_time=start_ms,
        end_time=end_ms,
        status=RunStatus(status),
        num_events=num_events,
        max_events=max_events,
        trigger_type=trigger_type,
        beam_type=beam_type,
        detector_mask=detector_mask,
    )


def _scalar_columns(sc: Scalar) -> tuple:
    """(value_tag, elem_tag, int, float, bool, text, time_ms, list) columns."""
    cols = [sc.tag.value, None, None, None, None, None, None, None]
    if sc.tag is ScalarTag.INT:
        cols[2] = sc.value
    elif sc.tag is ScalarTag.FLOAT:
        cols[3] = sc.value
    elif sc.tag is ScalarTag.BOOL:
        cols[4] = int(sc.value)
    elif sc.tag is ScalarTag.STR:
        cols[5] = sc.value
    elif sc.tag is ScalarTag.TIME:
        cols[6] = sc.value
    elif sc.tag is ScalarTag.LIST:
        cols[1] = sc.elem.value
        cols[7] = codec.canonical_json(codec.encode_scalar(sc)["value"])
    return tuple(cols)


def _scalar_from_columns(row: tuple) -> Scalar:
    tag_name, elem_name, v_int, v_float, v_bool, v_text, v_time, v_list = row
    tag = ScalarTag(tag_name)
    if tag is ScalarTag.INT:
        return Scalar.of_int(v_int)
    if tag is ScalarTag.FLOAT:
        return Scalar.of_float(v_float)
    if tag is ScalarTag.BOOL:
        return Scalar.of_bool(bool(v_bool))
    if tag is ScalarTag.STR:
        return Scalar.of_str(v_text)
    if tag is ScalarTag.TIME:
        return Scalar.of_time(v_time)
    return codec.parse_scalar(
        {"type": "list", "elem": elem_name, "value": json.loads(v_list)}
    )


def _encode_body(body) -> dict:
    if isinstance(body, MrsMessage):
        return codec.encode_mrs(body)
    if isinstance(body, IsInfo):
        return codec.encode_is(body)
    if isinstance(body, Comment):
        return codec.encode_comment(body)
    raise InvalidRecord(f"cannot store record of type {type(body).__name__}")


def _parse_body(kind: EnvelopeKind, obj: dict):
    if kind is EnvelopeKind.MRS:
        return codec.parse_mrs(obj)
    if kind is EnvelopeKind.IS:
        return codec.parse_is(obj)
    return codec.parse_comment(obj)
