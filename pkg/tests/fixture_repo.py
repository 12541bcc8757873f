"""Deterministic twelve-run repository used by service and UI tests.

Every timestamp, count, and attachment byte is a literal so golden HTTP
fixtures stay stable across runs and machines. The content is spread to
exercise each search axis: both statuses, all well-known trigger types plus
a custom one, case-varied beam names, distinct start times, one open run,
comments with a PNG and a binary attachment.
"""

from __future__ import annotations

from obk.auth import hash_password
from obk.model import (
    Attachment,
    CommentDraft,
    CommentOrigin,
    IsInfo,
    MrsMessage,
    RunHeader,
    RunStatus,
    Scalar,
    ScalarTag,
    Severity,
    parse_timestamp,
)
from obk.storage import Repository, UserRecord, blob_digest

T = parse_timestamp

# 1x1 transparent PNG, 67 bytes
PNG_BYTES = bytes.fromhex(
    "89504e470d0a1a0a0000000d494844520000000100000001080600000"
    "01f15c4890000000a49444154789c63000100000500010d0a2db40000"
    "000049454e44ae426082"
)
PNG_DIGEST = blob_digest(PNG_BYTES)

RAW_BYTES = bytes(range(256))
RAW_DIGEST = blob_digest(RAW_BYTES)

USERS = {
    "alice": ("wr-pass", "Writer"),
    "bob": ("rd-pass", "Reader"),
    "carol": ("adm-pass", "Admin"),
}

# (run_number, start, end, status, num_events, max_events, trigger, beam, mask)
TB_RUNS = [
    (1, "2002-08-01T08:00:00.000Z", "2002-08-01T09:30:00.000Z",
     RunStatus.GOOD, 120000, 200000, "Physics", "pp", 0x000000FF),
    (2, "2002-08-02T08:00:00.000Z", "2002-08-02T08:45:00.000Z",
     RunStatus.GOOD, 50000, 50000, "Physics", "pp", 0x000000FF),
    (3, "2002-08-03T10:15:00.000Z", "2002-08-03T10:20:00.000Z",
     RunStatus.BAD, 900, 100000, "Cosmic", "", 0x0000000F),
    (4, "2002-08-05T23:50:00.000Z", "2002-08-06T01:10:00.000Z",
     RunStatus.GOOD, 310000, 400000, "Calibration", "Pb-Pb", 0xFFFF0000),
    (5, "2002-08-10T12:00:00.000Z", "2002-08-10T16:00:00.000Z",
     RunStatus.GOOD, 275000, 300000, "Physics", "Pb-Pb", 0xFFFFFFFF),
    (6, "2002-08-11T12:00:00.000Z", "2002-08-11T12:01:00.000Z",
     RunStatus.BAD, 0, 300000, "Physics", "pb-pb", 0xFFFFFFFF),
    (7, "2002-08-14T09:00:00.000Z", "2002-08-14T11:00:00.000Z",
     RunStatus.GOOD, 180500, 250000, "LaserAlign", "pp", 0x00FF00FF),
    (8, "2002-08-20T07:30:00.000Z", "2002-08-20T09:00:00.000Z",
     RunStatus.GOOD, 99999, 100000, "Physics", "PP", 0x000000FF),
]

MUON_RUNS = [
    (1, "2002-08-04T06:00:00.000Z", "2002-08-04T07:00:00.000Z",
     RunStatus.GOOD, 42000, 50000, "Cosmic", "cosmics", 0x00000300),
    (2, "2002-08-09T06:00:00.000Z", "2002-08-09T06:05:00.000Z",
     RunStatus.BAD, 12, 50000, "Cosmic", "cosmics", 0x00000300),
    (3, "2002-08-15T06:00:00.000Z", "2002-08-15T08:30:00.000Z",
     RunStatus.GOOD, 47500, 50000, "Calibration", "", 0x00000302),
    (4, "2002-08-21T06:00:00.000Z", None,
     RunStatus.OPEN, 0, 50000, "Cosmic", "cosmics", 0x00000300),
]


def _open_header(partition, number, start, max_events, trigger, beam, mask):
    return RunHeader(
        partition=partition,
        run_number=number,
        start_time=T(start),
        end_time=None,
        status=RunStatus.OPEN,
        num_events=0,
        max_events=max_events,
        trigger_type=trigger,
        beam_type=beam,
        detector_mask=mask,
    )


def _build_run(repo: Repository, partition: str, row) -> None:
    number, start, end, status, num_events, max_events, trigger, beam, mask = row
    repo.begin_run(_open_header(partition, number, start, max_events, trigger, beam, mask))
    for fill in _RUN_FILLS.get((partition, number), ()):
        fill(repo, partition, number, T(start))
    if status is not RunStatus.OPEN:
        repo.end_run(partition, number, status, num_events, T(end))


def _fill_tb1(repo, partition, number, start):
    """The rich run: log messages, status objects, attachment comments."""
    repo.append_mrs(partition, number, MrsMessage(
        message_name="RC_START",
        severity=Severity.INFORMATION,
        application="RunControl",
        text="transition to RUNNING complete",
        timestamp=start + 1_000,
    ))
    repo.append_mrs(partition, number, MrsMessage(
        message_name="ROD_BUSY",
        severity=Severity.WARNING,
        application="ROS-TB-01",
        text="readout module busy above 5%",
        timestamp=start + 600_000,
        qualifiers=("DAQ", "TB"),
    ))
    repo.append_mrs(partition, number, MrsMessage(
        message_name="LVL1_DESYNC",
        severity=Severity.ERROR,
        application="TriggerMon",
        text="counter mismatch on channel 12",
        timestamp=start + 1_800_000,
    ))
    repo.append_is(partition, number, IsInfo(
        server="RunParams",
        object_name="RunParams.TB",
        class_name="RunParams",
        attributes=(
            ("run_type", Scalar.of_str("Physics")),
            ("recording", Scalar.of_bool(True)),
            ("beam_energy_gev", Scalar.of_float(450.0)),
            ("sample_counts", Scalar.of_list(ScalarTag.INT, (5, 8, 13))),
            ("started_at", Scalar.of_time(start)),
        ),
        timestamp=start + 2_000,
    ))
    repo.append_is(partition, number, IsInfo(
        server="EventCounter",
        object_name="EventCounter.L2",
        class_name="CounterInfo",
        attributes=(
            ("accepted", Scalar.of_int(118_734)),
            ("rejected", Scalar.of_int(1_266)),
            ("rate_hz", Scalar.of_float(22.5)),
        ),
        timestamp=start + 3_600_000,
    ))
    repo.append_comment(
        partition, number,
        CommentDraft(
            author="alice",
            created_at=start + 4_000_000,
            text="Beam spot looked stable; see snapshot.",
            origin=CommentOrigin.WEB,
            attachments=(
                Attachment(
                    filename="beamspot.png",
                    media_type="image/png",
                    size_bytes=len(PNG_BYTES),
                    digest=PNG_DIGEST,
                ),
            ),
        ),
        {PNG_DIGEST: PNG_BYTES},
    )
    repo.append_comment(
        partition, number,
        CommentDraft(
            author="bob",
            created_at=start + 4_500_000,
            text="Raw calibration block attached for offline study.",
            origin=CommentOrigin.OFFLINE,
            attachments=(
                Attachment(
                    filename="calib.bin",
                    media_type="application/octet-stream",
                    size_bytes=len(RAW_BYTES),
                    digest=RAW_DIGEST,
                ),
            ),
        ),
        {RAW_DIGEST: RAW_BYTES},
    )


def _fill_tb3(repo, partition, number, start):
    repo.append_mrs(partition, number, MrsMessage(
        message_name="TTC_LOST",
        severity=Severity.FATAL,
        application="TTCControl",
        text="timing link lost, aborting run",
        timestamp=start + 250_000,
    ))
    repo.append_comment(partition, number, CommentDraft(
        author="carol",
        created_at=start + 300_000,
        text="Aborted after TTC failure, hardware intervention needed.",
        origin=CommentOrigin.ONLINE,
    ))


def _fill_tb5(repo, partition, number, start):
    repo.append_is(partition, number, IsInfo(
        server="DFSummary",
        object_name="DFSummary.global",
        class_name="SummaryInfo",
        attributes=(
            ("lvl1_rate_hz", Scalar.of_float(75000.0)),
            ("deadtime_frac", Scalar.of_float(0.031)),
            ("sfo_hosts", Scalar.of_list(ScalarTag.STR, ("sfo-1", "sfo-2"))),
        ),
        timestamp=start + 60_000,
    ))


def _fill_muon4(repo, partition, number, start):
    repo.append_mrs(partition, number, MrsMessage(
        message_name="RC_START",
        severity=Severity.INFORMATION,
        application="RunControl",
        text="cosmic run started",
        timestamp=start + 500,
    ))
    repo.append_is(partition, number, IsInfo(
        server="RunParams",
        object_name="RunParams.MUON",
        class_name="RunParams",
        attributes=(
            ("run_type", Scalar.of_str("Cosmic")),
            ("recording", Scalar.of_bool(True)),
        ),
        timestamp=start + 1_500,
    ))


_RUN_FILLS = {
    ("TB", 1): (_fill_tb1,),
    ("TB", 3): (_fill_tb3,),
    ("TB", 5): (_fill_tb5,),
    ("MUON", 4): (_fill_muon4,),
}


def populate(repo: Repository) -> Repository:
    """Fill an empty repository with the fixture content; returns it."""
    for row in TB_RUNS:
        _build_run(repo, "TB", row)
    for row in MUON_RUNS:
        _build_run(repo, "MUON", row)
    for username, (password, role) in USERS.items():
        repo.put_user(UserRecord(username, hash_password(password), role))
    return repo
