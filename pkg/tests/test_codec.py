"""Wire codec round trips and rejection paths.

The property tests pin the core contract: encoding any value and parsing
it back yields a field-wise identical object, for every payload kind.
"""

import json

import pytest
from hypothesis import given, settings

import strategies as own
from obk import codec
from obk.errors import (
    MalformedJson,
    PayloadSchemaError,
    UnknownKind,
    VersionMismatch,
)
from obk.model import (
    CommentPayload,
    EnvelopeKind,
    MessageEnvelope,
    Scalar,
    ScalarTag,
    SorPayload,
)

WIRE_SOR = (
    '{"version":1,"kind":"SOR","partition":"TB","seq":1,'
    '"timestamp":"2002-08-14T12:30:00.000Z","payload":{"run_number":17,'
    '"max_events":100000,"trigger_type":"Physics","beam_type":"pp",'
    '"detector_mask":"0x000000ff"}}'
)


class TestEnvelopeRoundTrip:
    @settings(max_examples=200)
    @given(own.envelopes())
    def test_line_round_trip(self, e):
        assert codec.parse_envelope(codec.envelope_line(e)) == e

    def test_known_sor_bytes(self):
        """Field order and formatting on the wire are fixed, not incidental."""
        e = MessageEnvelope(
            kind=EnvelopeKind.SOR,
            partition="TB",
            seq=1,
            timestamp=1029328200000,
            payload=SorPayload(17, 100000, "Physics", "pp", 0xFF),
        )
        assert codec.envelope_line(e) == WIRE_SOR.encode() + b"\n"
        assert codec.parse_envelope(WIRE_SOR) == e

    def test_accepts_bytes_and_str(self):
        assert codec.parse_envelope(WIRE_SOR) == codec.parse_envelope(WIRE_SOR.encode())


class TestScalarRoundTrip:
    @given(own.scalars())
    def test_round_trip(self, s):
        assert codec.parse_scalar(codec.encode_scalar(s)) == s

    def test_time_encodes_as_iso_string(self):
        enc = codec.encode_scalar(Scalar.of_time(1029328200000))
        assert enc == {"type": "time", "value": "2002-08-14T12:30:00.000Z"}

    def test_list_keeps_element_tag(self):
        enc = codec.encode_scalar(Scalar.of_list(ScalarTag.INT, (1, 2)))
        assert enc == {"type": "list", "elem": "int", "value": [1, 2]}

    def test_int_position_accepts_no_float(self):
        with pytest.raises(PayloadSchemaError):
            codec.parse_scalar({"type": "int", "value": 1.5})

    def test_float_position_accepts_int(self):
        # JSON has one number type; 3 and 3.0 are the same wire value
        assert codec.parse_scalar({"type": "float", "value": 3}).value == 3.0

    def test_bool_position_accepts_no_int(self):
        with pytest.raises(PayloadSchemaError):
            codec.parse_scalar({"type": "bool", "value": 1})

    def test_nested_list_rejected(self):
        with pytest.raises(PayloadSchemaError):
            codec.parse_scalar({"type": "list", "elem": "list", "value": []})


class TestHeaderRoundTrip:
    @given(own.run_headers())
    def test_round_trip(self, h):
        assert codec.parse_run_header(codec.encode_run_header(h)) == h

    def test_open_run_has_null_end_time(self):
        from obk.model import RunHeader, RunStatus
        h = RunHeader("TB", 1, 0, None, RunStatus.OPEN, 0, 10, "Physics", "", 0)
        assert codec.encode_run_header(h)["end_time"] is None
        assert codec.parse_run_header(codec.encode_run_header(h)) == h


class TestMrsRoundTrip:
    @given(own.mrs_messages())
    def test_round_trip(self, m):
        assert codec.parse_mrs(codec.encode_mrs(m)) == m


class TestIsRoundTrip:
    @given(own.is_infos())
    def test_round_trip(self, i):
        assert codec.parse_is(codec.encode_is(i)) == i

    def test_attribute_order_preserved(self):
        from obk.model import IsInfo
        i = IsInfo("s", "o", "C",
                   (("zz", Scalar.of_int(1)), ("aa", Scalar.of_int(2))), 0)
        names = [a["name"] for a in codec.encode_is(i)["attributes"]]
        assert names == ["zz", "aa"]


class TestCommentPayload:
    @given(own.comment_payloads())
    def test_round_trip_carries_blobs(self, cp):
        e = MessageEnvelope(EnvelopeKind.COMMENT, "TB", 1, 0, cp)
        parsed = codec.parse_envelope(codec.envelope_line(e))
        assert parsed.payload.draft == cp.draft
        assert parsed.payload.blobs == cp.blobs

    def test_empty_comment_rejected(self):
        doc = json.loads(WIRE_SOR)
        doc["kind"] = "COMMENT"
        doc["payload"] = {
            "author": "a",
            "created_at": "2002-08-14T12:30:00.000Z",
            "text": "",
            "origin": "Web",
            "attachments": [],
        }
        with pytest.raises(PayloadSchemaError):
            codec.parse_envelope(json.dumps(doc))


class TestRejection:
    def test_malformed_json(self):
        with pytest.raises(MalformedJson):
            codec.parse_envelope("{not json")

    def test_top_level_array(self):
        with pytest.raises(MalformedJson):
            codec.parse_envelope("[1,2]")

    def test_invalid_utf8(self):
        with pytest.raises(MalformedJson):
            codec.parse_envelope(b"\xff\xfe{}")

    def test_version_mismatch(self):
        doc = json.loads(WIRE_SOR)
        doc["version"] = 2
        with pytest.raises(VersionMismatch):
            codec.parse_envelope(json.dumps(doc))

    def test_unknown_kind(self):
        doc = json.loads(WIRE_SOR)
        doc["kind"] = "PING"
        with pytest.raises(UnknownKind):
            codec.parse_envelope(json.dumps(doc))

    @pytest.mark.parametrize("field", ["version", "kind", "partition", "seq",
                                       "timestamp", "payload"])
    def test_missing_envelope_field(self, field):
        doc = json.loads(WIRE_SOR)
        del doc[field]
        with pytest.raises((PayloadSchemaError, MalformedJson)):
            codec.parse_envelope(json.dumps(doc))

    def test_error_names_offending_field(self):
        doc = json.loads(WIRE_SOR)
        doc["payload"]["detector_mask"] = "0xzz"
        with pytest.raises(PayloadSchemaError) as exc:
            codec.parse_envelope(json.dumps(doc))
        assert exc.value.field == "payload.detector_mask"

    @pytest.mark.parametrize("seq", [0, -1, "1", 1.5])
    def test_bad_seq(self, seq):
        doc = json.loads(WIRE_SOR)
        doc["seq"] = seq
        with pytest.raises(PayloadSchemaError):
            codec.parse_envelope(json.dumps(doc))

    @pytest.mark.parametrize("partition", ["", "has space", "/etc", "aé"])
    def test_bad_partition(self, partition):
        doc = json.loads(WIRE_SOR)
        doc["partition"] = partition
        with pytest.raises(PayloadSchemaError):
            codec.parse_envelope(json.dumps(doc))

    def test_eor_rejects_open_status(self):
        doc = json.loads(WIRE_SOR)
        doc["kind"] = "EOR"
        doc["payload"] = {"status": "Open", "num_events": 0}
        with pytest.raises(PayloadSchemaError):
            codec.parse_envelope(json.dumps(doc))

    def test_control_characters_rejected_in_text(self):
        doc = json.loads(WIRE_SOR)
        doc["payload"]["beam_type"] = "a\rb"
        with pytest.raises(PayloadSchemaError):
            codec.parse_envelope(json.dumps(doc))

    def test_bad_base64_attachment(self):
        doc = json.loads(WIRE_SOR)
        doc["kind"] = "COMMENT"
        doc["payload"] = {
            "author": "a",
            "created_at": "2002-08-14T12:30:00.000Z",
            "text": "x",
            "origin": "Web",
            "attachments": [{
                "filename": "f.bin",
                "media_type": "application/octet-stream",
                "size_bytes": 3,
                "digest": "ab" * 32,
                "content_b64": "!!not base64!!",
            }],
        }
        with pytest.raises(PayloadSchemaError):
            codec.parse_envelope(json.dumps(doc))


def test_canonical_json_is_compact_and_keeps_unicode():
    s = codec.canonical_json({"a": 1, "b": "é"})
    assert s == '{"a":1,"b":"é"}'
