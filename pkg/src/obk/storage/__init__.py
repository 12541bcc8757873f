"""Storage backends and the repository interface."""

from .base import (
    BackendId,
    EXPORT_HEADER,
    OrphanRecord,
    Repository,
    RepositoryHandle,
    RunDetail,
    StoredRecord,
    UserRecord,
    blob_digest,
    create_repository,
    export_canonical,
    open_repository,
    read_meta,
)
from .filestore import FileStoreRepository
from .relational import RelationalRepository

__all__ = [
    "BackendId",
    "EXPORT_HEADER",
    "FileStoreRepository",
    "OrphanRecord",
    "RelationalRepository",
    "Repository",
    "RepositoryHandle",
    "RunDetail",
    "StoredRecord",
    "UserRecord",
    "blob_digest",
    "create_repository",
    "export_canonical",
    "open_repository",
    "read_meta",
]
