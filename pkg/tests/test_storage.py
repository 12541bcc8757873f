"""Backend behavior, parametrized over the file and relational stores.

The two backends must be observationally identical through the Repository
interface; backend-specific classes only pin on-disk details.
"""

import json
import sqlite3

import pytest

import fixture_repo
from obk.errors import (
    AlreadyExists,
    AlreadyOpen,
    DigestMismatch,
    DuplicateRun,
    InvalidRecord,
    NotARepository,
    NotOpen,
    ReadOnlyRepository,
    RunClosed,
    UnknownRun,
)
from obk.model import (
    Attachment,
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
from obk.storage import (
    BackendId,
    EXPORT_HEADER,
    UserRecord,
    blob_digest,
    create_repository,
    export_canonical,
    open_repository,
    read_meta,
)

T0 = 1029283200000  # 2002-08-14T00:00:00Z


def open_header(partition="TB", number=1, start=T0, **kw):
    fields = dict(
        partition=partition, run_number=number, start_time=start, end_time=None,
        status=RunStatus.OPEN, num_events=0, max_events=1000,
        trigger_type="Physics", beam_type="pp", detector_mask=0xFF)
    fields.update(kw)
    return RunHeader(**fields)


def mrs(ts=T0 + 1, **kw):
    fields = dict(message_name="M", severity=Severity.INFORMATION,
                  application="app", text="hello", timestamp=ts)
    fields.update(kw)
    return MrsMessage(**fields)


def is_info(ts=T0 + 2, **kw):
    fields = dict(server="srv", object_name="srv.obj", class_name="C",
                  attributes=(("x", Scalar.of_int(1)),), timestamp=ts)
    fields.update(kw)
    return IsInfo(**fields)


def comment(ts=T0 + 3, text="note", attachments=(), **kw):
    fields = dict(author="alice", created_at=ts, text=text,
                  origin=CommentOrigin.ONLINE, attachments=tuple(attachments))
    fields.update(kw)
    return CommentDraft(**fields)


class TestLifecycle:
    def test_begin_then_end(self, repo):
        repo.begin_run(open_header())
        assert repo.get_open_run("TB") == 1
        closed = repo.end_run("TB", 1, RunStatus.GOOD, 500, T0 + 1000)
        assert closed.status is RunStatus.GOOD
        assert closed.num_events == 500
        assert closed.end_time == T0 + 1000
        assert repo.get_open_run("TB") is None

    def test_second_open_in_partition_rejected(self, repo):
        repo.begin_run(open_header(number=1))
        with pytest.raises(AlreadyOpen):
            repo.begin_run(open_header(number=2))

    def test_open_runs_in_distinct_partitions_coexist(self, repo):
        repo.begin_run(open_header("TB", 1))
        repo.begin_run(open_header("MUON", 1))
        assert repo.get_open_run("TB") == 1
        assert repo.get_open_run("MUON") == 1

    def test_run_number_never_reusable(self, repo):
        repo.begin_run(open_header(number=7))
        repo.end_run("TB", 7, RunStatus.GOOD, 0, T0 + 1)
        with pytest.raises(DuplicateRun):
            repo.begin_run(open_header(number=7))

    def test_end_twice_rejected(self, repo):
        repo.begin_run(open_header())
        repo.end_run("TB", 1, RunStatus.GOOD, 0, T0 + 1)
        with pytest.raises(NotOpen):
            repo.end_run("TB", 1, RunStatus.GOOD, 0, T0 + 2)

    def test_end_unknown_run(self, repo):
        with pytest.raises(UnknownRun):
            repo.end_run("TB", 99, RunStatus.GOOD, 0, T0)

    def test_end_before_start_rejected(self, repo):
        repo.begin_run(open_header())
        with pytest.raises(InvalidRecord):
            repo.end_run("TB", 1, RunStatus.GOOD, 0, T0 - 1)

    def test_begin_requires_open_status(self, repo):
        closed = open_header(status=RunStatus.GOOD, end_time=T0 + 1)
        with pytest.raises(InvalidRecord):
            repo.begin_run(closed)

    def test_begin_validates_header(self, repo):
        with pytest.raises(InvalidRecord):
            repo.begin_run(open_header(number=-3))

    def test_force_close_marks_bad_and_keeps_count(self, repo):
        repo.begin_run(open_header())
        repo.append_mrs("TB", 1, mrs())
        header = repo.force_close("TB", 1, end_time=T0 + 60000)
        assert header.status is RunStatus.BAD
        assert header.num_events == 0
        assert header.end_time == T0 + 60000


class TestRecords:
    def test_sequences_interleave_across_kinds(self, repo):
        repo.begin_run(open_header())
        assert repo.append_mrs("TB", 1, mrs(ts=T0 + 1)) == 1
        assert repo.append_is("TB", 1, is_info(ts=T0 + 2)) == 2
        assert repo.append_comment("TB", 1, comment(ts=T0 + 3)) == 1  # comment id
        assert repo.append_mrs("TB", 1, mrs(ts=T0 + 4)) == 4
        detail = repo.get_run_detail("TB", 1)
        assert [r.seq for r in detail.mrs] == [1, 4]
        assert [r.seq for r in detail.is_objects] == [2]
        assert [r.seq for r in detail.comments] == [3]

    def test_append_to_closed_run_rejected(self, repo):
        repo.begin_run(open_header())
        repo.end_run("TB", 1, RunStatus.GOOD, 0, T0 + 1)
        with pytest.raises(RunClosed):
            repo.append_mrs("TB", 1, mrs())
        with pytest.raises(RunClosed):
            repo.append_is("TB", 1, is_info())

    def test_append_to_unknown_run_rejected(self, repo):
        with pytest.raises(UnknownRun):
            repo.append_mrs("TB", 5, mrs())

    def test_comment_on_closed_run_allowed(self, repo):
        """The logbook keeps accepting annotations after a run ends."""
        repo.begin_run(open_header())
        repo.append_mrs("TB", 1, mrs(ts=T0 + 1))
        repo.append_comment("TB", 1, comment(ts=T0 + 2))
        repo.end_run("TB", 1, RunStatus.GOOD, 9, T0 + 10)
        cid = repo.append_comment("TB", 1, comment(ts=T0 + 20, text="post-run"))
        assert cid == 2
        detail = repo.get_run_detail("TB", 1)
        assert [r.body.comment_id for r in detail.comments] == [1, 2]
        assert [r.seq for r in detail.comments] == [2, 3]

    def test_comment_ids_count_per_run(self, repo):
        repo.begin_run(open_header("TB", 1))
        repo.begin_run(open_header("MUON", 1))
        assert repo.append_comment("TB", 1, comment()) == 1
        assert repo.append_comment("MUON", 1, comment()) == 1
        assert repo.append_comment("TB", 1, comment(ts=T0 + 9)) == 2

    def test_empty_comment_rejected(self, repo):
        repo.begin_run(open_header())
        with pytest.raises(InvalidRecord):
            repo.append_comment("TB", 1, comment(text=""))

    def test_record_bodies_round_trip(self, repo):
        record = is_info(attributes=(
            ("i", Scalar.of_int(-5)),
            ("f", Scalar.of_float(2.5)),
            ("b", Scalar.of_bool(False)),
            ("s", Scalar.of_str("text & <tags>\n\ttabbed")),
            ("t", Scalar.of_time(T0)),
            ("li", Scalar.of_list(ScalarTag.INT, (1, 2, 3))),
            ("lb", Scalar.of_list(ScalarTag.BOOL, (True, False))),
            ("ls", Scalar.of_list(ScalarTag.STR, ("a", "", "c"))),
            ("lt", Scalar.of_list(ScalarTag.TIME, (T0, T0 + 1))),
        ))
        m = mrs(text="line\nline\ttab", qualifiers=("q1", "q2"))
        repo.begin_run(open_header())
        repo.append_is("TB", 1, record)
        repo.append_mrs("TB", 1, m)
        detail = repo.get_run_detail("TB", 1)
        assert detail.is_objects[0].body == record
        assert detail.mrs[0].body == m


class TestAttachments:
    CONTENT = b"\x00\x01binary\xff"

    def _attached(self):
        return comment(attachments=[Attachment(
            filename="blob.bin", media_type="application/octet-stream",
            size_bytes=len(self.CONTENT), digest=blob_digest(self.CONTENT))])

    def test_round_trip(self, repo):
        repo.begin_run(open_header())
        repo.append_comment("TB", 1, self._attached(),
                            {blob_digest(self.CONTENT): self.CONTENT})
        digest = blob_digest(self.CONTENT)
        assert repo.get_attachment(digest) == self.CONTENT
        meta = repo.find_attachment_meta(digest)
        assert meta.filename == "blob.bin"
        assert meta.size_bytes == len(self.CONTENT)

    def test_missing_blob_rejected(self, repo):
        repo.begin_run(open_header())
        with pytest.raises(DigestMismatch):
            repo.append_comment("TB", 1, self._attached(), {})

    def test_wrong_content_rejected(self, repo):
        repo.begin_run(open_header())
        with pytest.raises(DigestMismatch):
            repo.append_comment("TB", 1, self._attached(),
                                {blob_digest(self.CONTENT): b"other"})

    def test_unknown_digest(self, repo):
        with pytest.raises(UnknownRun):
            repo.get_attachment("0" * 64)
        assert repo.find_attachment_meta("0" * 64) is None

    def test_deduplicated_by_content(self, repo):
        repo.begin_run(open_header())
        blobs = {blob_digest(self.CONTENT): self.CONTENT}
        repo.append_comment("TB", 1, self._attached(), blobs)
        repo.append_comment("TB", 1, comment(ts=T0 + 60,
                                             attachments=self._attached().attachments),
                            blobs)
        assert repo.get_attachment(blob_digest(self.CONTENT)) == self.CONTENT


class TestOrphans:
    def test_stored_and_listed(self, repo):
        body = mrs()
        n = repo.append_orphan("TB", EnvelopeKind.MRS, body)
        assert n == 1
        orphans = repo.list_orphans("TB")
        assert len(orphans) == 1
        assert orphans[0].seq == 1
        assert orphans[0].kind is EnvelopeKind.MRS
        assert orphans[0].body == body

    def test_partition_visible_through_orphans_alone(self, repo):
        repo.append_orphan("LONE", EnvelopeKind.IS, is_info())
        assert "LONE" in repo.list_partitions()

    def test_empty_partition_has_no_orphans(self, repo):
        assert repo.list_orphans("NOWHERE") == []

    def test_orphan_comment_round_trips_with_zero_id(self, repo):
        body = comment().with_id(0)
        repo.append_orphan("TB", EnvelopeKind.COMMENT, body)
        stored = repo.list_orphans("TB")[0]
        assert stored.body == body
        assert stored.body.comment_id == 0


class TestUsers:
    def test_put_get_list(self, repo):
        repo.put_user(UserRecord("zoe", "hash-z", "Reader"))
        repo.put_user(UserRecord("abe", "hash-a", "Admin"))
        assert repo.get_user("zoe").role == "Reader"
        assert repo.get_user("missing") is None
        assert [u.username for u in repo.list_users()] == ["abe", "zoe"]

    def test_put_overwrites(self, repo):
        repo.put_user(UserRecord("zoe", "h1", "Reader"))
        repo.put_user(UserRecord("zoe", "h2", "Writer"))
        assert repo.get_user("zoe").password_hash == "h2"
        assert len(repo.list_users()) == 1


class TestReopen:
    def test_closed_run_survives_reopen(self, backend, tmp_path):
        root = tmp_path / "r"
        repo = create_repository(backend, root)
        fixture_repo.populate(repo)
        before = export_canonical(repo)
        detail_before = repo.get_run_detail("TB", 1)
        repo.close()

        reopened = open_repository(root)
        assert export_canonical(reopened) == before
        assert reopened.get_run_detail("TB", 1) == detail_before
        assert reopened.get_open_run("MUON") == 4
        assert reopened.get_attachment(fixture_repo.PNG_DIGEST) == fixture_repo.PNG_BYTES
        assert reopened.get_user("alice").role == "Writer"
        reopened.close()

    def test_open_run_survives_unclosed_process(self, backend, tmp_path):
        """Simulates a crash: the repository object is dropped, never closed."""
        root = tmp_path / "r"
        repo = create_repository(backend, root)
        repo.begin_run(open_header())
        repo.append_mrs("TB", 1, mrs(ts=T0 + 1))
        repo.append_is("TB", 1, is_info(ts=T0 + 2))
        del repo  # no close()

        reopened = open_repository(root)
        assert reopened.get_open_run("TB") == 1
        detail = reopened.get_run_detail("TB", 1)
        assert detail.header.status is RunStatus.OPEN
        assert [r.seq for r in detail.mrs] == [1]
        assert [r.seq for r in detail.is_objects] == [2]
        reopened.end_run("TB", 1, RunStatus.GOOD, 5, T0 + 100)
        assert reopened.get_run_detail("TB", 1).header.status is RunStatus.GOOD
        reopened.close()


class TestCreationAndOpening:
    def test_create_stamps_backend(self, backend, tmp_path):
        repo = create_repository(backend, tmp_path / "r")
        repo.close()
        meta = read_meta(tmp_path / "r")
        assert meta["backend"] == backend.value

    def test_open_dispatches_on_meta(self, backend, tmp_path):
        create_repository(backend, tmp_path / "r").close()
        reopened = open_repository(tmp_path / "r")
        assert reopened.handle.backend is backend
        reopened.close()

    def test_create_over_nonempty_dir_rejected(self, backend, tmp_path):
        (tmp_path / "r").mkdir()
        (tmp_path / "r" / "junk").write_text("x")
        with pytest.raises(AlreadyExists):
            create_repository(backend, tmp_path / "r")

    def test_open_non_repository_rejected(self, tmp_path):
        with pytest.raises(NotARepository):
            open_repository(tmp_path)

    def test_read_only_open_blocks_writes(self, backend, tmp_path):
        create_repository(backend, tmp_path / "r").close()
        ro = open_repository(tmp_path / "r", writable=False)
        with pytest.raises(ReadOnlyRepository):
            ro.begin_run(open_header())
        with pytest.raises(ReadOnlyRepository):
            ro.put_user(UserRecord("u", "h", "Reader"))
        ro.close()


class TestCanonicalExport:
    def test_header_line(self, repo):
        assert export_canonical(repo) == EXPORT_HEADER

    def test_backends_export_identically(self, make_repo):
        r1 = fixture_repo.populate(make_repo(BackendId.FILE))
        r2 = fixture_repo.populate(make_repo(BackendId.RELATIONAL))
        assert export_canonical(r1) == export_canonical(r2)

    def test_records_merge_by_timestamp_then_seq(self, repo):
        repo.begin_run(open_header())
        repo.append_is("TB", 1, is_info(ts=T0 + 50))   # seq 1, later ts
        repo.append_mrs("TB", 1, mrs(ts=T0 + 10))      # seq 2, earlier ts
        repo.append_mrs("TB", 1, mrs(ts=T0 + 50))      # seq 3, ties with seq 1
        lines = export_canonical(repo).decode().splitlines()[1:]
        types = [json.loads(l)["type"] for l in lines]
        assert types == ["run", "mrs", "is", "mrs"]

    def test_export_includes_orphans_and_open_runs(self, repo):
        repo.begin_run(open_header())
        repo.append_orphan("TB", EnvelopeKind.MRS, mrs())
        dump = export_canonical(repo).decode()
        assert '"Open"' in dump
        assert '"orphan"' in dump


class TestFileStoreLayout:
    @pytest.fixture
    def froot(self, tmp_path):
        repo = create_repository(BackendId.FILE, tmp_path / "r")
        yield repo, tmp_path / "r"
        repo.close()

    def test_run_file_names_are_zero_padded(self, froot):
        repo, root = froot
        repo.begin_run(open_header(number=42))
        assert (root / "TB" / "run_0000000042.journal").exists()
        repo.end_run("TB", 42, RunStatus.GOOD, 0, T0 + 1)
        assert (root / "TB" / "run_0000000042.xml").exists()
        assert not (root / "TB" / "run_0000000042.journal").exists()

    def test_closed_run_is_well_formed_xml(self, froot):
        import xml.etree.ElementTree as ET
        repo, root = froot
        repo.begin_run(open_header(number=1))
        repo.append_mrs("TB", 1, mrs(text="a < b & c"))
        repo.end_run("TB", 1, RunStatus.GOOD, 3, T0 + 1)
        tree = ET.parse(root / "TB" / "run_0000000001.xml")
        assert tree.getroot().tag == "run"
        assert tree.getroot().get("partition") == "TB"

    def test_stale_journal_loses_to_xml(self, froot):
        """A crash between the XML fold and journal unlink leaves both files;
        the XML is the committed state and the journal must be ignored."""
        repo, root = froot
        repo.begin_run(open_header(number=1))
        repo.append_mrs("TB", 1, mrs())
        journal = (root / "TB" / "run_0000000001.journal").read_bytes()
        repo.end_run("TB", 1, RunStatus.GOOD, 1, T0 + 1)
        (root / "TB" / "run_0000000001.journal").write_bytes(journal)

        reopened = open_repository(root)
        assert reopened.get_open_run("TB") is None
        assert reopened.get_run_detail("TB", 1).header.status is RunStatus.GOOD
        # and the slot is still not reusable
        with pytest.raises(DuplicateRun):
            reopened.begin_run(open_header(number=1))
        reopened.close()

    def test_attachments_are_content_addressed_files(self, froot):
        repo, root = froot
        content = b"image-bytes"
        digest = blob_digest(content)
        repo.begin_run(open_header())
        repo.append_comment("TB", 1, comment(attachments=[Attachment(
            filename="a.png", media_type="image/png",
            size_bytes=len(content), digest=digest)]), {digest: content})
        assert (root / "TB" / "attachments" / digest).read_bytes() == content


class TestRelationalStore:
    @pytest.fixture
    def rrepo(self, make_repo):
        return make_repo(BackendId.RELATIONAL)

    def test_audit_clean_after_fixture(self, rrepo):
        fixture_repo.populate(rrepo)
        assert rrepo.audit() == []

    def test_single_database_file(self, rrepo):
        assert (rrepo.handle.root / "obk.db").exists()

    def test_buffered_commit_mode(self, make_repo):
        repo = make_repo(BackendId.RELATIONAL, commit_mode="buffered")
        repo.begin_run(open_header())
        repo.end_run("TB", 1, RunStatus.GOOD, 0, T0 + 1)
        assert repo.get_run_detail("TB", 1).header.status is RunStatus.GOOD

    def test_unknown_commit_mode_rejected(self, tmp_path):
        from obk.errors import StorageError
        with pytest.raises(StorageError):
            create_repository(BackendId.RELATIONAL, tmp_path / "r",
                              commit_mode="turbo")

    def test_typed_attribute_columns(self, rrepo):
        """Values land in type-specific columns, not a serialized blob."""
        rrepo.begin_run(open_header())
        rrepo.append_is("TB", 1, is_info(attributes=(
            ("n", Scalar.of_int(7)), ("s", Scalar.of_str("text")))))
        conn = sqlite3.connect(rrepo.handle.root / "obk.db")
        rows = conn.execute(
            "SELECT name, value_tag, value_int, value_text FROM is_attributes"
            " ORDER BY position").fetchall()
        conn.close()
        assert rows == [("n", "int", 7, None), ("s", "str", None, "text")]

    def test_reopen_rejects_unknown_schema_version(self, tmp_path):
        from obk.errors import RepositoryVersionError
        root = tmp_path / "r"
        create_repository(BackendId.RELATIONAL, root).close()
        conn = sqlite3.connect(root / "obk.db")
        conn.execute("UPDATE meta SET value = '99' WHERE key = 'schema_version'")
        conn.commit()
        conn.close()
        with pytest.raises(RepositoryVersionError):
            open_repository(root)


def test_blob_digest_is_sha256():
    assert blob_digest(b"") == (
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
