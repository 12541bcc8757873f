"""Exception hierarchy shared across the package.

Every error that can surface on the ingest wire carries a stable ``code``
string; the acquisition server sends it verbatim in ``err <seq> <CODE>``
replies.
"""

from __future__ import annotations


class ObkError(Exception):
    """Base class for all domain errors."""

    code = "INTERNAL"


# --- codec / wire parsing ---------------------------------------------------

class CodecError(ObkError):
    """Raised when a wire or canonical-JSON document fails to parse.

    ``field`` names the offending field when one can be identified.
    """

    code = "CODEC"

    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class MalformedJson(CodecError):
    code = "MALFORMED_JSON"


class UnknownKind(CodecError):
    code = "UNKNOWN_KIND"


class VersionMismatch(CodecError):
    code = "VERSION_MISMATCH"


class PayloadSchemaError(CodecError):
    code = "PAYLOAD_SCHEMA"


# --- storage ----------------------------------------------------------------

class StorageError(ObkError):
    code = "STORAGE"


class AlreadyExists(StorageError):
    """Repository creation target is non-empty or already initialized."""

    code = "ALREADY_EXISTS"


class NotARepository(StorageError):
    code = "NOT_A_REPOSITORY"


class RepositoryVersionError(StorageError):
    """Repository structure version is not one this build understands."""

    code = "REPOSITORY_VERSION"


class ReadOnlyRepository(StorageError):
    code = "READ_ONLY"


class DuplicateRun(StorageError):
    code = "DUPLICATE_RUN"


class AlreadyOpen(StorageError):
    code = "ALREADY_OPEN"


class UnknownRun(StorageError):
    code = "UNKNOWN_RUN"


class NotOpen(StorageError):
    code = "NOT_OPEN"


class RunClosed(StorageError):
    code = "RUN_CLOSED"


class DigestMismatch(StorageError):
    code = "DIGEST_MISMATCH"


class InvalidRecord(StorageError):
    """A record or header failed domain validation at the storage boundary."""

    code = "INVALID_RECORD"


class UnknownUser(StorageError):
    code = "UNKNOWN_USER"


# --- ingest -----------------------------------------------------------------

class IngestError(ObkError):
    code = "INGEST"


class SeqRegression(IngestError):
    code = "SEQ_REGRESSION"


class NoOpenRun(IngestError):
    code = "NO_OPEN_RUN"


# --- query ------------------------------------------------------------------

class TypeMismatch(ObkError):
    """Predicate operator applied to an incompatible value type."""

    code = "TYPE_MISMATCH"
