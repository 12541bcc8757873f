"""Canonical single-line JSON encoding for every domain type.

One encoding is used everywhere: the ingest wire, the HTTP API, the canonical
repository export and the CLI ``--format json`` output. Field order is fixed,
separators are compact, timestamps are ISO-8601 UTC with milliseconds, and
detector masks are ``0x`` + 8 hex digits. Encoding then parsing any value
yields a field-wise identical object.
"""

from __future__ import annotations

import base64
import json
from typing import Any, Optional

from .errors import MalformedJson, PayloadSchemaError, UnknownKind, VersionMismatch
from .model import (
    ENVELOPE_VERSION,
    Attachment,
    Comment,
    CommentDraft,
    CommentOrigin,
    CommentPayload,
    EnvelopeKind,
    EorPayload,
    IsInfo,
    MessageEnvelope,
    MrsMessage,
    RunHeader,
    RunStatus,
    Scalar,
    ScalarTag,
    Severity,
    SorPayload,
    detector_mask_format,
    detector_mask_parse,
    format_timestamp,
    is_valid_partition,
    parse_timestamp,
    text_is_safe,
)

_INT64_MIN = -(2 ** 63)
_INT64_MAX = 2 ** 63 - 1


def canonical_json(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


# --- encoders ---------------------------------------------------------------

def encode_run_header(h: RunHeader) -> dict:
    return {
        "partition": h.partition,
        "run_number": h.run_number,
        "start_time": format_timestamp(h.start_time),
        "end_time": None if h.end_time is None else format_timestamp(h.end_time),
        "status": h.status.value,
        "num_events": h.num_events,
        "max_events": h.max_events,
        "trigger_type": h.trigger_type,
        "beam_type": h.beam_type,
        "detector_mask": detector_mask_format(h.detector_mask),
    }


def encode_scalar(s: Scalar) -> dict:
    if s.tag is ScalarTag.LIST:
        return {
            "type": "list",
            "elem": s.elem.value,
            "value": [_encode_leaf(s.elem, v) for v in s.value],
        }
    return {"type": s.tag.value, "value": _encode_leaf(s.tag, s.value)}


def _encode_leaf(tag: ScalarTag, v) -> Any:
    if tag is ScalarTag.TIME:
        return format_timestamp(v)
    return v


def encode_mrs(m: MrsMessage) -> dict:
    return {
        "message_name": m.message_name,
        "severity": m.severity.value,
        "application": m.application,
        "text": m.text,
        "timestamp": format_timestamp(m.timestamp),
        "qualifiers": list(m.qualifiers),
    }


def encode_is(i: IsInfo) -> dict:
    attrs = []
    for name, sc in i.attributes:
        entry = {"name": name}
        entry.update(encode_scalar(sc))
        attrs.append(entry)
    return {
        "server": i.server,
        "object_name": i.object_name,
        "class_name": i.class_name,
        "attributes": attrs,
        "timestamp": format_timestamp(i.timestamp),
    }


def encode_attachment(a: Attachment) -> dict:
    return {
        "filename": a.filename,
        "media_type": a.media_type,
        "size_bytes": a.size_bytes,
        "digest": a.digest,
    }


def encode_comment(c: Comment) -> dict:
    return {
        "comment_id": c.comment_id,
        "author": c.author,
        "created_at": format_timestamp(c.created_at),
        "text": c.text,
        "origin": c.origin.value,
        "attachments": [encode_attachment(a) for a in c.attachments],
    }


def encode_envelope(e: MessageEnvelope) -> dict:
    if e.kind is EnvelopeKind.SOR:
        p = e.payload
        payload = {
            "run_number": p.run_number,
            "max_events": p.max_events,
            "trigger_type": p.trigger_type,
            "beam_type": p.beam_type,
            "detector_mask": detector_mask_format(p.detector_mask),
        }
    elif e.kind is EnvelopeKind.EOR:
        payload = {"status": e.payload.status.value, "num_events": e.payload.num_events}
    elif e.kind is EnvelopeKind.MRS:
        payload = encode_mrs(e.payload)
    elif e.kind is EnvelopeKind.IS:
        payload = encode_is(e.payload)
    else:
        cp = e.payload
        d = cp.draft
        payload = {
            "author": d.author,
            "created_at": format_timestamp(d.created_at),
            "text": d.text,
            "origin": d.origin.value,
            "attachments": [
                dict(
                    encode_attachment(a),
                    content_b64=base64.b64encode(cp.blobs[a.digest]).decode("ascii"),
                )
                for a in d.attachments
            ],
        }
    return {
        "version": e.version,
        "kind": e.kind.value,
        "partition": e.partition,
        "seq": e.seq,
        "timestamp": format_timestamp(e.timestamp),
        "payload": payload,
    }


def envelope_line(e: MessageEnvelope) -> bytes:
    return canonical_json(encode_envelope(e)).encode("utf-8") + b"\n"


# --- decoding helpers -------------------------------------------------------

def _need(obj: dict, field: str, ctx: str = ""):
    if field not in obj:
        raise PayloadSchemaError(f"missing field {field!r}", field=ctx + field)
    return obj[field]


def _str_field(obj: dict, field: str, ctx: str = "", allow_empty: bool = True) -> str:
    v = _need(obj, field, ctx)
    if not isinstance(v, str):
        raise PayloadSchemaError(f"field {field!r} must be a string", field=ctx + field)
    if not allow_empty and not v:
        raise PayloadSchemaError(f"field {field!r} must be non-empty", field=ctx + field)
    if not text_is_safe(v):
        raise PayloadSchemaError(
            f"field {field!r} contains control characters", field=ctx + field
        )
    return v


def _int_field(obj: dict, field: str, ctx: str = "", minimum: Optional[int] = None) -> int:
    v = _need(obj, field, ctx)
    if not isinstance(v, int) or isinstance(v, bool):
        raise PayloadSchemaError(f"field {field!r} must be an integer", field=ctx + field)
    if not _INT64_MIN <= v <= _INT64_MAX:
        raise PayloadSchemaError(f"field {field!r} out of 64-bit range", field=ctx + field)
    if minimum is not None and v < minimum:
        raise PayloadSchemaError(f"field {field!r} must be >= {minimum}", field=ctx + field)
    return v


def _ts_field(obj: dict, field: str, ctx: str = "") -> int:
    v = _str_field(obj, field, ctx)
    try:
        return parse_timestamp(v)
    except ValueError as exc:
        raise PayloadSchemaError(str(exc), field=ctx + field) from exc


def _enum_field(obj: dict, field: str, enum_cls, ctx: str = ""):
    v = _str_field(obj, field, ctx)
    try:
        return enum_cls(v)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise PayloadSchemaError(
            f"field {field!r} must be one of: {allowed}", field=ctx + field
        ) from None


def _obj_field(obj: dict, field: str, ctx: str = "") -> dict:
    v = _need(obj, field, ctx)
    if not isinstance(v, dict):
        raise PayloadSchemaError(f"field {field!r} must be an object", field=ctx + field)
    return v


def _list_field(obj: dict, field: str, ctx: str = "") -> list:
    v = _need(obj, field, ctx)
    if not isinstance(v, list):
        raise PayloadSchemaError(f"field {field!r} must be an array", field=ctx + field)
    return v


def _mask_field(obj: dict, field: str, ctx: str = "") -> int:
    v = _str_field(obj, field, ctx)
    try:
        return detector_mask_parse(v)
    except ValueError as exc:
        raise PayloadSchemaError(str(exc), field=ctx + field) from exc


def _load_obj(line) -> dict:
    if isinstance(line, (bytes, bytearray)):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not valid UTF-8: {exc}") from exc
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"not valid JSON: {exc.msg} at column {exc.colno}") from exc
    if not isinstance(obj, dict):
        raise MalformedJson("top-level JSON value must be an object")
    return obj


# --- decoders ---------------------------------------------------------------

def parse_run_header(doc) -> RunHeader:
    obj = doc if isinstance(doc, dict) else _load_obj(doc)
    end_raw = _need(obj, "end_time")
    if end_raw is not None and not isinstance(end_raw, str):
        raise PayloadSchemaError("field 'end_time' must be a string or null", field="end_time")
    return RunHeader(
        partition=_str_field(obj, "partition", allow_empty=False),
        run_number=_int_field(obj, "run_number", minimum=1),
        start_time=_ts_field(obj, "start_time"),
        end_time=None if end_raw is None else _ts_field(obj, "end_time"),
        status=_enum_field(obj, "status", RunStatus),
        num_events=_int_field(obj, "num_events", minimum=0),
        max_events=_int_field(obj, "max_events", minimum=0),
        trigger_type=_str_field(obj, "trigger_type", allow_empty=False),
        beam_type=_str_field(obj, "beam_type"),
        detector_mask=_mask_field(obj, "detector_mask"),
    )


def parse_scalar(obj: dict, ctx: str = "") -> Scalar:
    tag = _enum_field(obj, "type", ScalarTag, ctx)
    if tag is ScalarTag.LIST:
        elem = _enum_field(obj, "elem", ScalarTag, ctx)
        if elem is ScalarTag.LIST:
            raise PayloadSchemaError("nested lists are not supported", field=ctx + "elem")
        raw = _list_field(obj, "value", ctx)
        values = tuple(_parse_leaf(elem, v, ctx + "value") for v in raw)
        return Scalar.of_list(elem, values)
    v = _parse_leaf(tag, _need(obj, "value", ctx), ctx + "value")
    try:
        return Scalar(tag, v)
    except ValueError as exc:
        raise PayloadSchemaError(str(exc), field=ctx + "value") from exc


def _parse_leaf(tag: ScalarTag, v, field: str):
    if tag is ScalarTag.INT:
        if not isinstance(v, int) or isinstance(v, bool):
            raise PayloadSchemaError("int value must be a JSON integer", field=field)
        if not _INT64_MIN <= v <= _INT64_MAX:
            raise PayloadSchemaError("int value out of 64-bit range", field=field)
        return v
    if tag is ScalarTag.FLOAT:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise PayloadSchemaError("float value must be a JSON number", field=field)
        v = float(v)
        if v != v or v in (float("inf"), float("-inf")):
            raise PayloadSchemaError("float value must be finite", field=field)
        return v
    if tag is ScalarTag.BOOL:
        if not isinstance(v, bool):
            raise PayloadSchemaError("bool value must be true or false", field=field)
        return v
    if tag is ScalarTag.STR:
        if not isinstance(v, str):
            raise PayloadSchemaError("str value must be a JSON string", field=field)
        if not text_is_safe(v):
            raise PayloadSchemaError("str value contains control characters", field=field)
        return v
    if tag is ScalarTag.TIME:
        if not isinstance(v, str):
            raise PayloadSchemaError("time value must be a timestamp string", field=field)
        try:
            return parse_timestamp(v)
        except ValueError as exc:
            raise PayloadSchemaError(str(exc), field=field) from exc
    raise PayloadSchemaError("unsupported scalar type", field=field)


def parse_mrs(obj: dict, ctx: str = "") -> MrsMessage:
    quals = _list_field(obj, "qualifiers", ctx)
    for q in quals:
        if not isinstance(q, str) or not text_is_safe(q):
            raise PayloadSchemaError("qualifiers must be safe strings", field=ctx + "qualifiers")
    return MrsMessage(
        message_name=_str_field(obj, "message_name", ctx),
        severity=_enum_field(obj, "severity", Severity, ctx),
        application=_str_field(obj, "application", ctx),
        text=_str_field(obj, "text", ctx),
        timestamp=_ts_field(obj, "timestamp", ctx),
        qualifiers=tuple(quals),
    )


def parse_is(obj: dict, ctx: str = "") -> IsInfo:
    raw_attrs = _list_field(obj, "attributes", ctx)
    attrs = []
    for idx, entry in enumerate(raw_attrs):
        actx = f"{ctx}attributes[{idx}]."
        if not isinstance(entry, dict):
            raise PayloadSchemaError("attribute entry must be an object", field=actx[:-1])
        name = _str_field(entry, "name", actx, allow_empty=False)
        attrs.append((name, parse_scalar(entry, actx)))
    try:
        return IsInfo(
            server=_str_field(obj, "server", ctx, allow_empty=False),
            object_name=_str_field(obj, "object_name", ctx, allow_empty=False),
            class_name=_str_field(obj, "class_name", ctx, allow_empty=False),
            attributes=tuple(attrs),
            timestamp=_ts_field(obj, "timestamp", ctx),
        )
    except ValueError as exc:
        raise PayloadSchemaError(str(exc), field=ctx + "attributes") from exc


def parse_attachment(obj: dict, ctx: str = "") -> Attachment:
    try:
        return Attachment(
            filename=_str_field(obj, "filename", ctx),
            media_type=_str_field(obj, "media_type", ctx, allow_empty=False),
            size_bytes=_int_field(obj, "size_bytes", ctx, minimum=0),
            digest=_str_field(obj, "digest", ctx),
        )
    except ValueError as exc:
        raise PayloadSchemaError(str(exc), field=ctx + "filename") from exc


def parse_comment(obj: dict, ctx: str = "") -> Comment:
    # id 0 marks a comment that never reached a run (orphan storage)
    return Comment(
        comment_id=_int_field(obj, "comment_id", ctx, minimum=0),
        author=_str_field(obj, "author", ctx),
        created_at=_ts_field(obj, "created_at", ctx),
        text=_str_field(obj, "text", ctx),
        origin=_enum_field(obj, "origin", CommentOrigin, ctx),
        attachments=tuple(
            parse_attachment(a, f"{ctx}attachments[{i}].")
            for i, a in enumerate(_list_field(obj, "attachments", ctx))
        ),
    )


def _parse_comment_payload(obj: dict, ctx: str) -> CommentPayload:
    raw_atts = _list_field(obj, "attachments", ctx)
    attachments = []
    blobs: dict[str, bytes] = {}
    for i, entry in enumerate(raw_atts):
        actx = f"{ctx}attachments[{i}]."
        if not isinstance(entry, dict):
            raise PayloadSchemaError("attachment entry must be an object", field=actx[:-1])
        att = parse_attachment(entry, actx)
        b64 = _str_field(entry, "content_b64", actx)
        try:
            content = base64.b64decode(b64, validate=True)
        except Exception as exc:
            raise PayloadSchemaError(
                "content_b64 is not valid base64", field=actx + "content_b64"
            ) from exc
        attachments.append(att)
        blobs[att.digest] = content
    draft = CommentDraft(
        author=_str_field(obj, "author", ctx),
        created_at=_ts_field(obj, "created_at", ctx),
        text=_str_field(obj, "text", ctx),
        origin=_enum_field(obj, "origin", CommentOrigin, ctx),
        attachments=tuple(attachments),
    )
    if draft.is_empty():
        raise PayloadSchemaError(
            "comment needs text or at least one attachment", field=ctx + "text"
        )
    return CommentPayload(draft=draft, blobs=blobs)


def parse_envelope(line) -> MessageEnvelope:
    """Parse and fully validate one wire line into an envelope.

    Raises MalformedJson, UnknownKind, VersionMismatch or PayloadSchemaError;
    each names the offending field where one exists.
    """
    obj = _load_obj(line)
    version = _int_field(obj, "version")
    if version != ENVELOPE_VERSION:
        raise VersionMismatch(
            f"unsupported envelope version {version}", field="version"
        )
    kind_raw = _str_field(obj, "kind")
    try:
        kind = EnvelopeKind(kind_raw)
    except ValueError:
        raise UnknownKind(f"unknown envelope kind {kind_raw!r}", field="kind") from None
    partition = _str_field(obj, "partition", allow_empty=False)
    if not is_valid_partition(partition):
        raise PayloadSchemaError(
            f"partition {partition!r} has characters outside [A-Za-z0-9_.-]",
            field="partition",
        )
    seq = _int_field(obj, "seq", minimum=1)
    timestamp = _ts_field(obj, "timestamp")
    payload_obj = _obj_field(obj, "payload")
    ctx = "payload."

    if kind is EnvelopeKind.SOR:
        payload = SorPayload(
            run_number=_int_field(payload_obj, "run_number", ctx, minimum=1),
            max_events=_int_field(payload_obj, "max_events", ctx, minimum=0),
            trigger_type=_str_field(payload_obj, "trigger_type", ctx, allow_empty=False),
            beam_type=_str_field(payload_obj, "beam_type", ctx),
            detector_mask=_mask_field(payload_obj, "detector_mask", ctx),
        )
    elif kind is EnvelopeKind.EOR:
        status = _enum_field(payload_obj, "status", RunStatus, ctx)
        if status is RunStatus.OPEN:
            raise PayloadSchemaError(
                "end-of-run status must be Good or Bad", field=ctx + "status"
            )
        payload = EorPayload(
            status=status, num_events=_int_field(payload_obj, "num_events", ctx, minimum=0)
        )
    elif kind is EnvelopeKind.MRS:
        payload = parse_mrs(payload_obj, ctx)
    elif kind is EnvelopeKind.IS:
        payload = parse_is(payload_obj, ctx)
    else:
        payload = _parse_comment_payload(payload_obj, ctx)

    return MessageEnvelope(
        kind=kind, partition=partition, seq=seq, timestamp=timestamp, payload=payload
    )
