"""Domain vocabulary: runs, log/status records, comments, search criteria.

All types here are immutable value objects with no I/O. Timestamps are integer
milliseconds since the Unix epoch, always UTC; the canonical text form is
ISO-8601 with milliseconds, e.g. ``2002-08-14T12:30:00.000Z``.
"""

from __future__ import annotations

import calendar
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Optional, Union

TimestampMs = int

_INT64_MIN = -(2 ** 63)
_INT64_MAX = 2 ** 63 - 1

# Free-text fields end up in XML documents. C0 control characters other
# than tab and newline are either unrepresentable there or get rewritten
# by parsers (a carriage return in element text comes back as newline),
# so both are rejected at the model boundary.
_FORBIDDEN_TEXT = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")

# Partition names become directory and lock-file names.
_PARTITION_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.-]*$")

_TS_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2}):(\d{2})\.(\d{3})Z$")

_MASK_RE = re.compile(r"^0x[0-9a-fA-F]{8}$")


def text_is_safe(s: str) -> bool:
    return _FORBIDDEN_TEXT.search(s) is None


def is_valid_partition(name: str) -> bool:
    return bool(_PARTITION_RE.match(name))


def format_timestamp(ms: TimestampMs) -> str:
    """Render epoch milliseconds as ISO-8601 UTC with millisecond precision."""
    # Integer split keeps this exact; float seconds would round near .999.
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + ".%03dZ" % (ms % 1000)


def parse_timestamp(s: str) -> TimestampMs:
    """Parse the canonical ISO-8601 form back to epoch milliseconds.

    Raises ValueError on any other shape; only the exact ``.mmmZ`` suffix is
    accepted.
    """
    m = _TS_RE.match(s)
    if not m:
        raise ValueError(f"bad timestamp {s!r}: expected YYYY-MM-DDTHH:MM:SS.mmmZ")
    y, mo, d, h, mi, sec, ms = (int(g) for g in m.groups())
    dt = datetime(y, mo, d, h, mi, sec, tzinfo=timezone.utc)
    return calendar.timegm(dt.utctimetuple()) * 1000 + ms


def now_ms() -> TimestampMs:
    return int(datetime.now(tz=timezone.utc).timestamp() * 1000)


class RunStatus(str, Enum):
    OPEN = "Open"
    GOOD = "Good"
    BAD = "Bad"


class Severity(str, Enum):
    INFORMATION = "Information"
    WARNING = "Warning"
    ERROR = "Error"
    FATAL = "Fatal"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {
    Severity.INFORMATION: 0,
    Severity.WARNING: 1,
    Severity.ERROR: 2,
    Severity.FATAL: 3,
}


class CommentOrigin(str, Enum):
    ONLINE = "Online"
    OFFLINE = "Offline"
    WEB = "Web"


# Trigger types are an open set: three well-known values plus free-form
# strings for anything else, so the type is plain ``str`` with constants.
TRIGGER_COSMIC = "Cosmic"
TRIGGER_CALIBRATION = "Calibration"
TRIGGER_PHYSICS = "Physics"

KNOWN_TRIGGER_TYPES = (TRIGGER_COSMIC, TRIGGER_CALIBRATION, TRIGGER_PHYSICS)


def detector_mask_format(mask: int) -> str:
    """Format a 32-bit detector mask as ``0x`` + 8 lowercase hex digits."""
    if not isinstance(mask, int) or isinstance(mask, bool):
        raise ValueError("detector mask must be an integer")
    if not 0 <= mask <= 0xFFFFFFFF:
        raise ValueError(f"detector mask {mask} out of 32-bit range")
    return "0x%08x" % mask


def detector_mask_parse(s: str) -> int:
    """Inverse of :func:`detector_mask_format`; width is enforced strictly."""
    if not _MASK_RE.match(s):
        raise ValueError(f"bad detector mask {s!r}: expected 0x + exactly 8 hex digits")
    return int(s[2:], 16)


class ScalarTag(str, Enum):
    INT = "int"
    FLOAT = "float"
    BOOL = "bool"
    STR = "str"
    TIME = "time"
    LIST = "list"


_LEAF_TAGS = (ScalarTag.INT, ScalarTag.FLOAT, ScalarTag.BOOL, ScalarTag.STR, ScalarTag.TIME)


@dataclass(frozen=True)
class Scalar:
    """Tagged value carried by a status-object attribute.

    ``value`` holds the raw Python value; for LIST it is a tuple of raw
    element values and ``elem`` names their shared tag.
    """

    tag: ScalarTag
    value: Union[int, float, bool, str, tuple]
    elem: Optional[ScalarTag] = None

    def __post_init__(self):
        if self.tag is ScalarTag.LIST:
            if self.elem is None or self.elem not in _LEAF_TAGS:
                raise ValueError("list scalar needs a leaf element tag")
            if not isinstance(self.value, tuple):
                raise ValueError("list scalar value must be a tuple")
            for v in self.value:
                _check_leaf(self.elem, v)
        else:
            if self.elem is not None:
                raise ValueError("elem tag is only valid for lists")
            _check_leaf(self.tag, self.value)

    @staticmethod
    def of_int(v: int) -> "Scalar":
        return Scalar(ScalarTag.INT, v)

    @staticmethod
    def of_float(v: float) -> "Scalar":
        return Scalar(ScalarTag.FLOAT, float(v))

    @staticmethod
    def of_bool(v: bool) -> "Scalar":
        return Scalar(ScalarTag.BOOL, v)

    @staticmethod
    def of_str(v: str) -> "Scalar":
        return Scalar(ScalarTag.STR, v)

    @staticmethod
    def of_time(ms: TimestampMs) -> "Scalar":
        return Scalar(ScalarTag.TIME, ms)

    @staticmethod
    def of_list(elem: ScalarTag, values) -> "Scalar":
        return Scalar(ScalarTag.LIST, tuple(values), elem)


def _check_leaf(tag: ScalarTag, v) -> None:
    if tag is ScalarTag.INT:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValueError("int scalar must be an int")
        if not _INT64_MIN <= v <= _INT64_MAX:
            raise ValueError("int scalar out of 64-bit range")
    elif tag is ScalarTag.FLOAT:
        if not isinstance(v, float):
            raise ValueError("float scalar must be a float")
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("float scalar must be finite")
    elif tag is ScalarTag.BOOL:
        if not isinstance(v, bool):
            raise ValueError("bool scalar must be a bool")
    elif tag is ScalarTag.STR:
        if not isinstance(v, str):
            raise ValueError("str scalar must be a str")
        if not text_is_safe(v):
            raise ValueError("str scalar contains control characters")
    elif tag is ScalarTag.TIME:
        if not isinstance(v, int) or isinstance(v, bool):
            raise ValueError("time scalar must be epoch milliseconds")
    else:  # pragma: no cover - guarded by caller
        raise ValueError(f"bad leaf tag {tag}")


@dataclass(frozen=True)
class RunHeader:
    partition: str
    run_number: int
    start_time: TimestampMs
    end_time: Optional[TimestampMs]
    status: RunStatus
    num_events: int
    max_events: int
    trigger_type: str
    beam_type: str
    detector_mask: int


def validate_header(h: RunHeader) -> list[str]:
    """Return every violated header invariant; empty list means valid.

    Total function: never raises, reports all violations at once.
    """
    violations = []
    if not h.partition or not is_valid_partition(h.partition):
        violations.append("bad-partition")
    if not isinstance(h.run_number, int) or h.run_number <= 0:
        violations.append("non-positive-run-number")
    if h.status is RunStatus.OPEN:
        if h.end_time is not None:
            violations.append("open-with-end-time")
    else:
        if h.end_time is None:
            violations.append("closed-without-end-time")
    if h.end_time is not None and h.end_time < h.start_time:
        violations.append("end-before-start")
    if h.num_events < 0:
        violations.append("negative-num-events")
    if h.max_events < 0:
        violations.append("negative-max-events")
    if not 0 <= h.detector_mask <= 0xFFFFFFFF:
        violations.append("detector-mask-out-of-range")
    if not h.trigger_type or not text_is_safe(h.trigger_type):
        violations.append("bad-trigger-type")
    if not text_is_safe(h.beam_type):
        violations.append("bad-beam-type")
    return violations


@dataclass(frozen=True)
class MrsMessage:
    message_name: str
    severity: Severity
    application: str
    text: str
    timestamp: TimestampMs
    qualifiers: tuple[str, ...] = ()


@dataclass(frozen=True)
class IsInfo:
    """Named, typed information object published by one server.

    Attribute order is the wire order and is preserved everywhere; names must
    be unique within one object.
    """

    server: str
    object_name: str
    class_name: str
    attributes: tuple[tuple[str, Scalar], ...]
    timestamp: TimestampMs

    def __post_init__(self):
        names = [n for n, _ in self.attributes]
        if len(names) != len(set(names)):
            raise ValueError("duplicate attribute name in status object")


@dataclass(frozen=True)
class Attachment:
    """Metadata for one content-addressed file blob."""

    filename: str
    media_type: str
    size_bytes: int
    digest: str

    def __post_init__(self):
        if "/" in self.filename or "\\" in self.filename or not self.filename:
            raise ValueError("attachment filename must be non-empty with no path separators")
        if self.size_bytes < 0:
            raise ValueError("attachment size must be non-negative")
        if not re.fullmatch(r"[0-9a-f]{64}", self.digest):
            raise ValueError("attachment digest must be 64 lowercase hex characters")


@dataclass(frozen=True)
class Comment:
    comment_id: int
    author: str
    created_at: TimestampMs
    text: str
    origin: CommentOrigin
    attachments: tuple[Attachment, ...] = ()


@dataclass(frozen=True)
class CommentDraft:
    """A comment before the store assigns its per-run id."""

    author: str
    created_at: TimestampMs
    text: str
    origin: CommentOrigin
    attachments: tuple[Attachment, ...] = ()

    def is_empty(self) -> bool:
        return not self.text and not self.attachments

    def with_id(self, comment_id: int) -> Comment:
        return Comment(
            comment_id=comment_id,
            author=self.author,
            created_at=self.created_at,
            text=self.text,
            origin=self.origin,
            attachments=self.attachments,
        )


class SortKey(str, Enum):
    RUN_NUMBER = "run_number"
    START_TIME = "start_time"
    NUM_EVENTS = "num_events"


class SortDir(str, Enum):
    ASC = "asc"
    DESC = "desc"


@dataclass(frozen=True)
class SearchCriteria:
    """Conjunctive run filter mirroring the logbook search form.

    ``status`` may only be Good or Bad; open runs are reachable through the
    ``include_open`` flag of the query layer instead.
    """

    status: Optional[RunStatus] = None
    max_events_at_most: Optional[int] = None
    start_from: Optional[TimestampMs] = None
    start_to: Optional[TimestampMs] = None
    beam_type: Optional[str] = None
    trigger_type: Optional[str] = None
    sort_key: SortKey = SortKey.RUN_NUMBER
    sort_dir: SortDir = SortDir.DESC

    def validate(self) -> None:
        if self.status is RunStatus.OPEN:
            raise ValueError("status criterion accepts only Good or Bad")
        if (
            self.start_from is not None
            and self.start_to is not None
            and self.start_from > self.start_to
        ):
            raise ValueError("start_from is after start_to")


class EnvelopeKind(str, Enum):
    SOR = "SOR"
    EOR = "EOR"
    MRS = "MRS"
    IS = "IS"
    COMMENT = "COMMENT"


@dataclass(frozen=True)
class SorPayload:
    run_number: int
    max_events: int
    trigger_type: str
    beam_type: str
    detector_mask: int


@dataclass(frozen=True)
class EorPayload:
    status: RunStatus  # Good or Bad
    num_events: int


@dataclass(frozen=True)
class CommentPayload:
    """Comment draft plus attachment contents keyed by digest."""

    draft: CommentDraft
    blobs: dict[str, bytes] = field(default_factory=dict)


EnvelopePayload = Union[SorPayload, EorPayload, MrsMessage, IsInfo, CommentPayload]

ENVELOPE_VERSION = 1


@dataclass(frozen=True)
class MessageEnvelope:
    """Versioned wire unit; ``seq`` is per-connection and strictly increasing."""

    kind: EnvelopeKind
    partition: str
    seq: int
    timestamp: TimestampMs
    payload: EnvelopePayload
    version: int = ENVELOPE_VERSION


_PAYLOAD_TYPES = {
    EnvelopeKind.SOR: SorPayload,
    EnvelopeKind.EOR: EorPayload,
    EnvelopeKind.MRS: MrsMessage,
    EnvelopeKind.IS: IsInfo,
    EnvelopeKind.COMMENT: CommentPayload,
}


def payload_type_for(kind: EnvelopeKind) -> type:
    return _PAYLOAD_TYPES[kind]
