"""In-memory Repository for fast lifecycle tests.

Implements the storage interface on dicts, going through the same shared
validation guards as the real backends. Used where half a million
lifecycle steps must run in seconds; persistence behavior is covered by
the backend tests instead.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional

from obk.errors import AlreadyOpen, DuplicateRun, NotOpen, RunClosed, UnknownRun
from obk.model import EnvelopeKind, RunHeader, RunStatus
from obk.storage import (
    BackendId,
    OrphanRecord,
    Repository,
    RepositoryHandle,
    RunDetail,
    StoredRecord,
    UserRecord,
)


class MemoryRepository(Repository):
    def __init__(self):
        super().__init__(RepositoryHandle(BackendId.FILE, Path("/nonexistent"), True))
        self.runs: dict[tuple[str, int], dict] = {}
        self.orphans: dict[str, list[OrphanRecord]] = {}
        self.users: dict[str, UserRecord] = {}
        self.blobs: dict[str, bytes] = {}

    def close(self) -> None:
        pass

    def begin_run(self, header: RunHeader) -> None:
        self._require_writable()
        self._check_open_header(header)
        for (part, _), run in self.runs.items():
            if part == header.partition and run["header"].status is RunStatus.OPEN:
                raise AlreadyOpen(f"partition {header.partition!r} has an open run")
        key = (header.partition, header.run_number)
        if key in self.runs:
            raise DuplicateRun(f"run {key} exists")
        self.runs[key] = {"header": header, "mrs": [], "is": [], "comments": [],
                          "next_seq": 1}

    def _run(self, partition: str, run_number: int) -> dict:
        try:
            return self.runs[(partition, run_number)]
        except KeyError:
            raise UnknownRun(f"no run {run_number} in {partition!r}") from None

    def end_run(self, partition, run_number, status, num_events, end_time) -> RunHeader:
        self._require_writable()
        run = self._run(partition, run_number)
        header = run["header"]
        if header.status is not RunStatus.OPEN:
            raise NotOpen(f"run {run_number} is closed")
        self._check_close(header.start_time, status, num_events, end_time)
        header = dataclasses.replace(
            header, status=status, num_events=num_events, end_time=end_time)
        run["header"] = header
        return header

    def _append(self, partition, run_number, bucket: str, body) -> int:
        run = self._run(partition, run_number)
        if run["header"].status is not RunStatus.OPEN:
            raise RunClosed(f"run {run_number} is closed")
        seq = run["next_seq"]
        run["next_seq"] += 1
        run[bucket].append(StoredRecord(seq, body))
        return seq

    def append_mrs(self, partition, run_number, m) -> int:
        self._require_writable()
        return self._append(partition, run_number, "mrs", m)

    def append_is(self, partition, run_number, i) -> int:
        self._require_writable()
        return self._append(partition, run_number, "is", i)

    def append_comment(self, partition, run_number, draft, blobs=None) -> int:
        # unlike other appends this works on closed runs too
        self._require_writable()
        blobs = blobs or {}
        self._check_comment(draft, blobs)
        run = self._run(partition, run_number)
        comment_id = len(run["comments"]) + 1
        if run["header"].status is RunStatus.OPEN:
            seq = run["next_seq"]
            run["next_seq"] += 1
        else:
            seq = 1 + max(
                (r.seq for bucket in ("mrs", "is", "comments") for r in run[bucket]),
                default=0,
            )
        run["comments"].append(StoredRecord(seq, draft.with_id(comment_id)))
        self.blobs.update(blobs)
        return comment_id

    def append_orphan(self, partition, kind: EnvelopeKind, body) -> int:
        self._require_writable()
        olist = self.orphans.setdefault(partition, [])
        olist.append(OrphanRecord(len(olist) + 1, kind, body))
        return len(olist)

    def list_partitions(self) -> list[str]:
        names = {part for part, _ in self.runs}
        names.update(part for part, olist in self.orphans.items() if olist)
        return sorted(names)

    def list_run_headers(self, partition: Optional[str] = None) -> list[RunHeader]:
        keys = sorted(k for k in self.runs
                      if partition is None or k[0] == partition)
        return [self.runs[k]["header"] for k in keys]

    def get_run_detail(self, partition, run_number) -> RunDetail:
        run = self._run(partition, run_number)
        return RunDetail(run["header"], tuple(run["mrs"]), tuple(run["is"]),
                         tuple(run["comments"]))

    def get_open_run(self, partition) -> Optional[int]:
        for (part, number), run in self.runs.items():
            if part == partition and run["header"].status is RunStatus.OPEN:
                return number
        return None

    def get_attachment(self, digest: str) -> bytes:
        if digest not in self.blobs:
            raise UnknownRun(f"no attachment {digest}")
        return self.blobs[digest]

    def find_attachment_meta(self, digest: str):
        for run in self.runs.values():
            for rec in run["comments"]:
                for att in rec.body.attachments:
                    if att.digest == digest:
                        return att
        return None

    def list_orphans(self, partition) -> list[OrphanRecord]:
        return list(self.orphans.get(partition, []))

    def put_user(self, user: UserRecord) -> None:
        self.users[user.username] = user

    def get_user(self, username):
        return self.users.get(username)

    def list_users(self) -> list[UserRecord]:
        return sorted(self.users.values(), key=lambda u: u.username)

    def summary(self):
        """Snapshot in the same shape as the reference store's summary."""
        runs = {}
        for key, run in sorted(self.runs.items()):
            header = run["header"]
            merged = sorted(
                [("MRS", r.seq) for r in run["mrs"]]
                + [("IS", r.seq) for r in run["is"]]
                + [("COMMENT", r.seq) for r in run["comments"]],
                key=lambda kr: kr[1],
            )
            runs[key] = (
                header.status.value,
                header.num_events,
                header.end_time,
                tuple(merged),
                tuple(r.body.comment_id for r in run["comments"]),
            )
        orphans = {
            part: tuple(o.kind.value for o in olist)
            for part, olist in sorted(self.orphans.items())
            if olist
        }
        return (runs, orphans)
