"""File backend: one human-readable XML document per run.

Layout under the repository root:

    <partition>/run_<10-digit number>.xml       closed runs
    <partition>/run_<10-digit number>.journal   the open run, one JSON line
                                                per header/record
    <partition>/attachments/<digest>            content-addressed blobs
    <partition>/orphans.jsonl                   records with no open run
    obk-users.json                              user accounts

While a run is open its records are appended to the journal; closing the run
folds journal contents into the final XML document (written to a temp file
and renamed, so a closed run file is always complete). A journal line is
flushed before the append returns, which makes acknowledged records survive
a killed process.

This backend keeps no index: begin_run discovers used run numbers and any
open journal by listing the partition directory, so its start-of-run cost
grows with the number of stored runs. That mirrors the storage technology
this backend models and is measured by the benchmark harness.
"""

from __future__ import annotations

import json
import os
import re
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Optional

from .. import codec
from ..errors import (
    AlreadyOpen,
    DuplicateRun,
    InvalidRecord,
    NotOpen,
    RunClosed,
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
    TimestampMs,
    detector_mask_format,
    detector_mask_parse,
    format_timestamp,
    parse_timestamp,
)
from .base import (
    META_FILENAME,
    OrphanRecord,
    Repository,
    RepositoryHandle,
    RunDetail,
    StoredRecord,
    UserRecord,
)

_RUN_FILE_RE = re.compile(r"^run_(\d{10})\.(xml|journal)$")
_NON_PARTITION_ENTRIES = {META_FILENAME, "obk-users.json", ".locks"}

XML_VERSION = "1"


def run_xml_name(run_number: int) -> str:
    return f"run_{run_number:010d}.xml"


def run_journal_name(run_number: int) -> str:
    return f"run_{run_number:010d}.journal"


class FileStoreRepository(Repository):
    def __init__(self, handle: RepositoryHandle, create: bool = False):
        super().__init__(handle)
        self.root = Path(handle.root)

    def close(self) -> None:
        pass

    # -- directory scanning --

    def _partition_dir(self, partition: str) -> Path:
        return self.root / partition

    def _scan_partition(self, partition: str) -> tuple[set[int], set[int]]:
        """Return (used run numbers, journal run numbers) for a partition.

        A journal with a sibling XML file is a leftover from an interrupted
        close and does not count as an open run.
        """
        used: set[int] = set()
        journals: set[int] = set()
        pdir = self._partition_dir(partition)
        try:
            entries = os.scandir(pdir)
        except FileNotFoundError:
            return used, journals
        with entries:
            for entry in entries:
                m = _RUN_FILE_RE.match(entry.name)
                if not m:
                    continue
                number = int(m.group(1))
                used.add(number)
                if m.group(2) == "journal":
                    journals.add(number)
        stale = {n for n in journals if (pdir / run_xml_name(n)).exists()}
        return used, journals - stale

    def _journal_path(self, partition: str, run_number: int) -> Path:
        return self._partition_dir(partition) / run_journal_name(run_number)

    def _xml_path(self, partition: str, run_number: int) -> Path:
        return self._partition_dir(partition) / run_xml_name(run_number)

    # -- run lifecycle --

    def begin_run(self, header: RunHeader) -> None:
        self._require_writable()
        self._check_open_header(header)
        partition = header.partition
        with self._locks.held(partition):
            pdir = self._partition_dir(partition)
            pdir.mkdir(exist_ok=True)
            used, open_journals = self._scan_partition(partition)
            if open_journals:
                raise AlreadyOpen(
                    f"partition {partition!r} already has open run {min(open_journals)}"
                )
            if header.run_number in used:
                raise DuplicateRun(
                    f"run {header.run_number} already exists in partition {partition!r}"
                )
            line = _journal_line("header", 0, codec.encode_run_header(header))
            with open(self._journal_path(partition, header.run_number), "x", encoding="utf-8") as f:
                f.write(line)
                f.flush()

    def end_run(self, partition, run_number, status, num_events, end_time) -> RunHeader:
        self._require_writable()
        with self._locks.held(partition):
            detail = self._load_open_run(partition, run_number)
            self._check_close(detail.header.start_time, status, num_events, end_time)
            header = _close_header(detail.header, status, num_events, end_time)
            closed = RunDetail(header, detail.mrs, detail.is_objects, detail.comments)
            self._write_run_xml(partition, run_number, closed)
            self._journal_path(partition, run_number).unlink(missing_ok=True)
            return header

    def _load_open_run(self, partition: str, run_number: int) -> RunDetail:
        """Read the journal of an open run; raises if the run is not open."""
        jpath = self._journal_path(partition, run_number)
        xpath = self._xml_path(partition, run_number)
        if xpath.exists():
            raise NotOpen(f"run {run_number} in partition {partition!r} is closed")
        if not jpath.exists():
            raise UnknownRun(f"no run {run_number} in partition {partition!r}")
        return _detail_from_journal(jpath)

    # -- appends --

    def _append_record(self, partition, run_number, rectype: str, body: dict) -> int:
        jpath = self._journal_path(partition, run_number)
        xpath = self._xml_path(partition, run_number)
        if not jpath.exists() or xpath.exists():
            if xpath.exists():
                raise RunClosed(f"run {run_number} in partition {partition!r} is closed")
            raise UnknownRun(f"no run {run_number} in partition {partition!r}")
        seq = _count_records(jpath) + 1
        with open(jpath, "a", encoding="utf-8") as f:
            f.write(_journal_line(rectype, seq, body))
            f.flush()
        return seq

    def append_mrs(self, partition, run_number, m: MrsMessage) -> int:
        self._require_writable()
        with self._locks.held(partition):
            return self._append_record(partition, run_number, "mrs", codec.encode_mrs(m))

    def append_is(self, partition, run_number, i: IsInfo) -> int:
        self._require_writable()
        with self._locks.held(partition):
            return self._append_record(partition, run_number, "is", codec.encode_is(i))

    def append_comment(self, partition, run_number, draft: CommentDraft, blobs=None) -> int:
        self._require_writable()
        blobs = blobs or {}
        self._check_comment(draft, blobs)
        with self._locks.held(partition):
            jpath = self._journal_path(partition, run_number)
            xpath = self._xml_path(partition, run_number)
            if xpath.exists():
                return self._append_comment_closed(partition, run_number, draft, blobs)
            if not jpath.exists():
                raise UnknownRun(f"no run {run_number} in partition {partition!r}")
            self._store_blobs(partition, draft, blobs)
            comment = draft.with_id(_count_comments(jpath) + 1)
            self._append_record(partition, run_number, "comment", codec.encode_comment(comment))
            return comment.comment_id

    def _append_comment_closed(self, partition, run_number, draft, blobs) -> int:
        detail = _detail_from_xml(self._xml_path(partition, run_number))
        self._store_blobs(partition, draft, blobs)
        comment = draft.with_id(len(detail.comments) + 1)
        next_seq = 1 + max(
            (r.seq for recs in (detail.mrs, detail.is_objects, detail.comments) for r in recs),
            default=0,
        )
        updated = RunDetail(
            detail.header,
            detail.mrs,
            detail.is_objects,
            detail.comments + (StoredRecord(next_seq, comment),),
        )
        self._write_run_xml(partition, run_number, updated)
        return comment.comment_id

    def _store_blobs(self, partition: str, draft: CommentDraft, blobs) -> None:
        adir = self._partition_dir(partition) / "attachments"
        for att in draft.attachments:
            adir.mkdir(parents=True, exist_ok=True)
            target = adir / att.digest
            if target.exists():
                continue  # content-addressed, identical by definition
            tmp = adir / f".{att.digest}.tmp"
            tmp.write_bytes(blobs[att.digest])
            os.replace(tmp, target)

    def append_orphan(self, partition, kind: EnvelopeKind, body) -> int:
        self._require_writable()
        with self._locks.held(partition):
            pdir = self._partition_dir(partition)
            pdir.mkdir(exist_ok=True)
            opath = pdir / "orphans.jsonl"
            seq = _count_lines(opath) + 1
            obj = {"seq": seq, "kind": kind.value, "record": _encode_record_body(body)}
            with open(opath, "a", encoding="utf-8") as f:
                f.write(codec.canonical_json(obj) + "\n")
                f.flush()
            return seq

    # -- reads --

    def list_partitions(self) -> list[str]:
        names = []
        for entry in os.scandir(self.root):
            if entry.is_dir() and entry.name not in _NON_PARTITION_ENTRIES:
                names.append(entry.name)
        return sorted(names)

    def list_run_headers(self, partition: Optional[str] = None) -> list[RunHeader]:
        partitions = [partition] if partition is not None else self.list_partitions()
        headers = []
        for part in partitions:
            used, open_journals = self._scan_partition(part)
            for number in sorted(used):
                if number in open_journals:
                    headers.append(_header_from_journal(self._journal_path(part, number)))
                else:
                    headers.append(_header_from_xml(self._xml_path(part, number)))
        return headers

    def get_run_detail(self, partition: str, run_number: int) -> RunDetail:
        xpath = self._xml_path(partition, run_number)
        if xpath.exists():
            return _detail_from_xml(xpath)
        jpath = self._journal_path(partition, run_number)
        if jpath.exists():
            return _detail_from_journal(jpath)
        raise UnknownRun(f"no run {run_number} in partition {partition!r}")

    def get_open_run(self, partition: str) -> Optional[int]:
        _, open_journals = self._scan_partition(partition)
        return min(open_journals) if open_journals else None

    def get_attachment(self, digest: str) -> bytes:
        for part in self.list_partitions():
            target = self._partition_dir(part) / "attachments" / digest
            if target.exists():
                return target.read_bytes()
        raise UnknownRun(f"no attachment with digest {digest}")

    def find_attachment_meta(self, digest: str) -> Optional[Attachment]:
        for header in self.list_run_headers():
            detail = self.get_run_detail(header.partition, header.run_number)
            for rec in detail.comments:
                for att in rec.body.attachments:
                    if att.digest == digest:
                        return att
        return None

    def list_orphans(self, partition: str) -> list[OrphanRecord]:
        opath = self._partition_dir(partition) / "orphans.jsonl"
        if not opath.exists():
            return []
        orphans = []
        with open(opath, encoding="utf-8") as f:
            for line in f:
                obj = json.loads(line)
                kind = EnvelopeKind(obj["kind"])
                orphans.append(
                    OrphanRecord(obj["seq"], kind, _parse_record_body(kind, obj["record"]))
                )
        return orphans

    # -- users --

    def _users_path(self) -> Path:
        return self.root / "obk-users.json"

    def put_user(self, user: UserRecord) -> None:
        self._require_writable()
        with self._locks.held("_users"):
            users = {u.username: u for u in self.list_users()}
            users[user.username] = user
            doc = {
                "users": [
                    {"username": u.username, "password_hash": u.password_hash, "role": u.role}
                    for u in sorted(users.values(), key=lambda u: u.username)
                ]
            }
            tmp = self._users_path().with_suffix(".tmp")
            tmp.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            os.replace(tmp, self._users_path())

    def get_user(self, username: str) -> Optional[UserRecord]:
        for u in self.list_users():
            if u.username == username:
                return u
        return None

    def list_users(self) -> list[UserRecord]:
        path = self._users_path()
        if not path.exists():
            return []
        doc = json.loads(path.read_text(encoding="utf-8"))
        return [
            UserRecord(u["username"], u["password_hash"], u["role"])
            for u in doc.get("users", [])
        ]

    # -- XML folding --

    def _write_run_xml(self, partition: str, run_number: int, detail: RunDetail) -> None:
        doc = xml_from_detail(detail)
        tmp = self._xml_path(partition, run_number).with_suffix(".xml.tmp")
        doc.write(tmp, encoding="UTF-8", xml_declaration=True)
        with open(tmp, "ab") as f:
            f.write(b"\n")
        os.replace(tmp, self._xml_path(partition, run_number))


# --- journal encoding -------------------------------------------------------

def _journal_line(rectype: str, seq: int, body: dict) -> str:
    return codec.canonical_json({"type": rectype, "seq": seq, "record": body}) + "\n"


def _count_records(jpath: Path) -> int:
    with open(jpath, "rb") as f:
        return sum(1 for _ in f) - 1  # minus the header line


def _count_comments(jpath: Path) -> int:
    count = 0
    with open(jpath, "rb") as f:
        for line in f:
            if line.startswith(b'{"type":"comment"'):
                count += 1
    return count


def _count_lines(path: Path) -> int:
    if not path.exists():
        return 0
    with open(path, "rb") as f:
        return sum(1 for _ in f)


def _encode_record_body(body) -> dict:
    if isinstance(body, MrsMessage):
        return codec.encode_mrs(body)
    if isinstance(body, IsInfo):
        return codec.encode_is(body)
    if isinstance(body, Comment):
        return codec.encode_comment(body)
    raise InvalidRecord(f"cannot store record of type {type(body).__name__}")


def _parse_record_body(kind: EnvelopeKind, obj: dict):
    if kind is EnvelopeKind.MRS:
        return codec.parse_mrs(obj)
    if kind is EnvelopeKind.IS:
        return codec.parse_is(obj)
    return codec.parse_comment(obj)


def _header_from_journal(jpath: Path) -> RunHeader:
    with open(jpath, encoding="utf-8") as f:
        first = f.readline()
    return codec.parse_run_header(json.loads(first)["record"])


def _detail_from_journal(jpath: Path) -> RunDetail:
    header = None
    mrs, is_objects, comments = [], [], []
    with open(jpath, encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            rectype, body = obj["type"], obj["record"]
            if rectype == "header":
                header = codec.parse_run_header(body)
            elif rectype == "mrs":
                mrs.append(StoredRecord(obj["seq"], codec.parse_mrs(body)))
            elif rectype == "is":
                is_objects.append(StoredRecord(obj["seq"], codec.parse_is(body)))
            else:
                comments.append(StoredRecord(obj["seq"], codec.parse_comment(body)))
    if header is None:
        raise InvalidRecord(f"journal {jpath} has no header line")
    return RunDetail(header, tuple(mrs), tuple(is_objects), tuple(comments))


def _close_header(header: RunHeader, status, num_events, end_time) -> RunHeader:
    return RunHeader(
        partition=header.partition,
        run_number=header.run_number,
        start_time=header.start_time,
        end_time=end_time,
        status=status,
        num_events=num_events,
        max_events=header.max_events,
        trigger_type=header.trigger_type,
        beam_type=header.beam_type,
        detector_mask=header.detector_mask,
    )


# --- XML document schema ----------------------------------------------------
#
# <run version="1" partition="TB" number="1">
#   <header>
#     <partition> <run_number> <start_time> [<end_time>] <status>
#     <num_events> <max_events> <trigger_type> <beam_type> <detector_mask>
#   </header>
#   <mrs seq="N"> <message_name> <severity> <application> <text> <timestamp>
#                 <qualifier>* </mrs>
#   <is seq="N">  <server> <object_name> <class_name> <timestamp>
#                 <attr name=".." type=".." [elem=".."]>value</attr>* </is>
#   <comment seq="N" id="K"> <author> <created_at> <text> <origin>
#                 <attachment> <filename> <media_type> <size_bytes> <digest>
#                 </attachment>* </comment>
# </run>
#
# Values are element text; timestamps use the canonical ISO form, detector
# masks the 0x-prefixed hex form, list attribute values a JSON array.

def xml_from_detail(detail: RunDetail) -> ET.ElementTree:
    h = detail.header
    run_el = ET.Element(
        "run",
        {"version": XML_VERSION, "partition": h.partition, "number": str(h.run_number)},
    )
    header_el = ET.SubElement(run_el, "header")
    _leaf(header_el, "partition", h.partition)
    _leaf(header_el, "run_number", str(h.run_number))
    _leaf(header_el, "start_time", format_timestamp(h.start_time))
    if h.end_time is not None:
        _leaf(header_el, "end_time", format_timestamp(h.end_time))
    _leaf(header_el, "status", h.status.value)
    _leaf(header_el, "num_events", str(h.num_events))
    _leaf(header_el, "max_events", str(h.max_events))
    _leaf(header_el, "trigger_type", h.trigger_type)
    _leaf(header_el, "beam_type", h.beam_type)
    _leaf(header_el, "detector_mask", detector_mask_format(h.detector_mask))

    merged = sorted(
        [("mrs", r) for r in detail.mrs]
        + [("is", r) for r in detail.is_objects]
        + [("comment", r) for r in detail.comments],
        key=lambda kr: kr[1].seq,
    )
    for rectype, rec in merged:
        if rectype == "mrs":
            _mrs_element(run_el, rec)
        elif rectype == "is":
            _is_element(run_el, rec)
        else:
            _comment_element(run_el, rec)

    tree = ET.ElementTree(run_el)
    ET.indent(tree)
    return tree


def _leaf(parent: ET.Element, tag: str, text: str) -> ET.Element:
    el = ET.SubElement(parent, tag)
    el.text = text
    return el


def _mrs_element(parent: ET.Element, rec: StoredRecord) -> None:
    m: MrsMessage = rec.body
    el = ET.SubElement(parent, "mrs", {"seq": str(rec.seq)})
    _leaf(el, "message_name", m.message_name)
    _leaf(el, "severity", m.severity.value)
    _leaf(el, "application", m.application)
    _leaf(el, "text", m.text)
    _leaf(el, "timestamp", format_timestamp(m.timestamp))
    for q in m.qualifiers:
        _leaf(el, "qualifier", q)


def _is_element(parent: ET.Element, rec: StoredRecord) -> None:
    i: IsInfo = rec.body
    el = ET.SubElement(parent, "is", {"seq": str(rec.seq)})
    _leaf(el, "server", i.server)
    _leaf(el, "object_name", i.object_name)
    _leaf(el, "class_name", i.class_name)
    _leaf(el, "timestamp", format_timestamp(i.timestamp))
    for name, sc in i.attributes:
        attrs = {"name": name, "type": sc.tag.value}
        if sc.tag is ScalarTag.LIST:
            attrs["elem"] = sc.elem.value
        attr_el = ET.SubElement(el, "attr", attrs)
        attr_el.text = _scalar_text(sc)


def _comment_element(parent: ET.Element, rec: StoredRecord) -> None:
    c: Comment = rec.body
    el = ET.SubElement(parent, "comment", {"seq": str(rec.seq), "id": str(c.comment_id)})
    _leaf(el, "author", c.author)
    _leaf(el, "created_at", format_timestamp(c.created_at))
    _leaf(el, "text", c.text)
    _leaf(el, "origin", c.origin.value)
    for att in c.attachments:
        att_el = ET.SubElement(el, "attachment")
        _leaf(att_el, "filename", att.filename)
        _leaf(att_el, "media_type", att.media_type)
        _leaf(att_el, "size_bytes", str(att.size_bytes))
        _leaf(att_el, "digest", att.digest)


def _scalar_text(sc: Scalar) -> str:
    if sc.tag is ScalarTag.LIST:
        items = [format_timestamp(v) if sc.elem is ScalarTag.TIME else v for v in sc.value]
        return json.dumps(items, separators=(",", ":"), ensure_ascii=False)
    if sc.tag is ScalarTag.STR:
        return sc.value
    if sc.tag is ScalarTag.TIME:
        return format_timestamp(sc.value)
    if sc.tag is ScalarTag.BOOL:
        return "true" if sc.value else "false"
    if sc.tag is ScalarTag.FLOAT:
        return repr(sc.value)
    return str(sc.value)


def _scalar_from_text(tag: ScalarTag, elem: Optional[ScalarTag], text: str) -> Scalar:
    if tag is ScalarTag.LIST:
        return Scalar.of_list(elem, tuple(_leaf_from_json(elem, v) for v in json.loads(text)))
    return Scalar(tag, _leaf_from_text(tag, text))


def _leaf_from_text(tag: ScalarTag, text: str):
    if tag is ScalarTag.INT:
        return int(text)
    if tag is ScalarTag.FLOAT:
        return float(text)
    if tag is ScalarTag.BOOL:
        return text == "true"
    if tag is ScalarTag.TIME:
        return parse_timestamp(text)
    return text


def _leaf_from_json(tag: ScalarTag, v):
    if tag is ScalarTag.TIME:
        return parse_timestamp(v)
    if tag is ScalarTag.FLOAT:
        return float(v)
    return v


def _header_from_xml(xpath: Path) -> RunHeader:
    return _parse_header_element(ET.parse(xpath).getroot().find("header"))


def _parse_header_element(el: ET.Element) -> RunHeader:
    end_el = el.find("end_time")
    return RunHeader(
        partition=_text(el, "partition"),
        run_number=int(_text(el, "run_number")),
        start_time=parse_timestamp(_text(el, "start_time")),
        end_time=None if end_el is None else parse_timestamp(end_el.text or ""),
        status=RunStatus(_text(el, "status")),
        num_events=int(_text(el, "num_events")),
        max_events=int(_text(el, "max_events")),
        trigger_type=_text(el, "trigger_type"),
        beam_type=_text(el, "beam_type"),
        detector_mask=detector_mask_parse(_text(el, "detector_mask")),
    )


def _text(el: ET.Element, tag: str) -> str:
    child = el.find(tag)
    if child is None:
        raise InvalidRecord(f"run document is missing <{tag}>")
    return child.text or ""


def _detail_from_xml(xpath: Path) -> RunDetail:
    root = ET.parse(xpath).getroot()
    header = _parse_header_element(root.find("header"))
    mrs, is_objects, comments = [], [], []
    for el in root:
        if el.tag == "mrs":
            seq = int(el.get("seq"))
            mrs.append(StoredRecord(seq, MrsMessage(
                message_name=_text(el, "message_name"),
                severity=Severity(_text(el, "severity")),
                application=_text(el, "application"),
                text=_text(el, "text"),
                timestamp=parse_timestamp(_text(el, "timestamp")),
                qualifiers=tuple(q.text or "" for q in el.findall("qualifier")),
            )))
        elif el.tag == "is":
            seq = int(el.get("seq"))
            attributes = []
            for attr_el in el.findall("attr"):
                tag = ScalarTag(attr_el.get("type"))
                elem = ScalarTag(attr_el.get("elem")) if attr_el.get("elem") else None
                attributes.append(
                    (attr_el.get("name"), _scalar_from_text(tag, elem, attr_el.text or ""))
                )
            is_objects.append(StoredRecord(seq, IsInfo(
                server=_text(el, "server"),
                object_name=_text(el, "object_name"),
                class_name=_text(el, "class_name"),
                attributes=tuple(attributes),
                timestamp=parse_timestamp(_text(el, "timestamp")),
            )))
        elif el.tag == "comment":
            seq = int(el.get("seq"))
            attachments = tuple(
                Attachment(
                    filename=_text(a, "filename"),
                    media_type=_text(a, "media_type"),
                    size_bytes=int(_text(a, "size_bytes")),
                    digest=_text(a, "digest"),
                )
                for a in el.findall("attachment")
            )
            comments.append(StoredRecord(seq, Comment(
                comment_id=int(el.get("id")),
                author=_text(el, "author"),
                created_at=parse_timestamp(_text(el, "created_at")),
                text=_text(el, "text"),
                origin=CommentOrigin(_text(el, "origin")),
                attachments=attachments,
            )))
    return RunDetail(header, tuple(mrs), tuple(is_objects), tuple(comments))
