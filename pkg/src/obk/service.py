"""HTTP facade: query endpoints, comment entry, attachments, admin.

All state lives in the repository; the service holds only session tokens.
Responses are JSON under /api/v1; errors use a single envelope:

    {"error": {"code": "...", "message": "...", "field": "..."}}

Authentication is a bearer token from POST /api/v1/auth/login. A config
may also define a static `admin_token` granting the Admin role, which is
the bootstrap path when the repository (and so the user table) does not
exist yet.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import codec
from .auth import DUMMY_HASH, Role, TokenStore, hash_password, verify_password
from .errors import ObkError, StorageError, UnknownRun
from .model import (
    Attachment,
    CommentDraft,
    CommentOrigin,
    RunStatus,
    SearchCriteria,
    SortDir,
    SortKey,
    now_ms,
    parse_timestamp,
)
from .query import find_runs, get_run
from .storage import (
    BackendId,
    Repository,
    blob_digest,
    create_repository,
    open_repository,
)

__all__ = ["ServiceConfig", "create_app", "load_config"]

INLINE_TYPES = ("text/plain", "image/png", "image/jpeg", "application/pdf")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    repository_root: str = "./obk-repo"
    backend_options: dict = field(default_factory=dict)
    token_ttl_seconds: float = 12 * 3600.0
    inline_types: tuple[str, ...] = INLINE_TYPES
    admin_token: Optional[str] = None


def load_config(path) -> ServiceConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = ServiceConfig()
    for key in ("host", "port", "repository_root", "token_ttl_seconds", "admin_token"):
        if key in doc:
            setattr(cfg, key, doc[key])
    if "backend_options" in doc:
        cfg.backend_options = dict(doc["backend_options"])
    if "inline_types" in doc:
        cfg.inline_types = tuple(doc["inline_types"])
    return cfg


class _ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


def _error_response(exc: _ApiError) -> JSONResponse:
    body = {"error": {"code": exc.code, "message": exc.message}}
    if exc.field:
        body["error"]["field"] = exc.field
    return JSONResponse(status_code=exc.status, content=body)


@dataclass(frozen=True)
class _Principal:
    username: str
    role: Role


class _State:
    """Mutable service state: the (possibly not yet created) repository."""

    def __init__(self, config: ServiceConfig, repo: Optional[Repository],
                 tokens: Optional[TokenStore]):
        self.config = config
        self.repo = repo
        self.tokens = tokens or TokenStore(config.token_ttl_seconds)
        self._repo_lock = threading.Lock()

    def get_repo(self) -> Repository:
        with self._repo_lock:
            if self.repo is None:
                try:
                    self.repo = open_repository(
                        self.config.repository_root, **self.config.backend_options
                    )
                except (ObkError, OSError) as exc:
                    raise _ApiError(
                        503, "REPOSITORY_UNAVAILABLE",
                        f"repository not initialized: {exc}",
                    ) from exc
            return self.repo

    def bind_repo(self, repo: Repository) -> None:
        with self._repo_lock:
            if self.repo is not None:
                self.repo.close()
            self.repo = repo


def create_app(
    config: Optional[ServiceConfig] = None,
    repo: Optional[Repository] = None,
    tokens: Optional[TokenStore] = None,
) -> FastAPI:
    config = config or ServiceConfig()
    state = _State(config, repo, tokens)
    app = FastAPI(title="obk logbook", docs_url=None, redoc_url=None,
                  openapi_url=None)
    app.state.obk = state

    @app.exception_handler(_ApiError)
    async def _on_api_error(request: Request, exc: _ApiError):
        return _error_response(exc)

    # -- auth helpers --

    def principal_for(request: Request) -> Optional[_Principal]:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            return None
        token = header[7:].strip()
        if config.admin_token and token == config.admin_token:
            return _Principal("root", Role.ADMIN)
        session = state.tokens.resolve(token)
        if session is None:
            return None
        return _Principal(session.username, session.role)

    def require_role(request: Request, required: Role) -> _Principal:
        principal = principal_for(request)
        if principal is None:
            raise _ApiError(401, "UNAUTHENTICATED", "missing or invalid token")
        if not principal.role.allows(required):
            raise _ApiError(
                403, "FORBIDDEN",
                f"role {principal.role.value} cannot act as {required.value}",
            )
        return principal

    # -- query endpoints --

    @app.get("/api/v1/partitions")
    def list_partitions():
        repo = state.get_repo()
        return {"partitions": repo.list_partitions()}

    @app.get("/api/v1/runs")
    def search_runs(request: Request):
        repo = state.get_repo()
        criteria, include_open = _parse_criteria(request.query_params)
        headers = find_runs(repo, criteria, include_open=include_open)
        return {"runs": [codec.encode_run_header(h) for h in headers]}

    @app.get("/api/v1/runs/{partition}/{run_number}")
    def run_detail(partition: str, run_number: str):
        repo = state.get_repo()
        number = _parse_int_path(run_number, "run_number")
        try:
            detail = get_run(repo, partition, number)
        except UnknownRun as exc:
            raise _ApiError(404, exc.code, str(exc)) from exc
        return {
            "header": codec.encode_run_header(detail.header),
            "mrs": [
                {"seq": r.seq, "record": codec.encode_mrs(r.body)}
                for r in detail.mrs
            ],
            "is_objects": [
                {"seq": r.seq, "record": codec.encode_is(r.body)}
                for r in detail.is_objects
            ],
            "comments": [
                {"seq": r.seq, "record": codec.encode_comment(r.body)}
                for r in detail.comments
            ],
        }

    # -- comments and attachments --

    @app.post("/api/v1/runs/{partition}/{run_number}/comments", status_code=201)
    async def post_comment(partition: str, run_number: str, request: Request):
        principal = require_role(request, Role.WRITER)
        repo = state.get_repo()
        number = _parse_int_path(run_number, "run_number")
        form = await request.form()
        text = form.get("text", "")
        if not isinstance(text, str):
            raise _ApiError(400, "BAD_PARAM", "text must be a form field", "text")
        # textareas submit trailing newlines; whitespace alone is no comment
        text = text.strip()
        origin_raw = form.get("origin", CommentOrigin.WEB.value)
        try:
            origin = CommentOrigin(origin_raw)
        except ValueError:
            raise _ApiError(400, "BAD_PARAM",
                            f"unknown origin {origin_raw!r}", "origin")
        author = form.get("author", "") or principal.username
        if not isinstance(author, str):
            raise _ApiError(400, "BAD_PARAM", "author must be a form field", "author")
        attachments: list[Attachment] = []
        blobs: dict[str, bytes] = {}
        for upload in form.getlist("files"):
            if isinstance(upload, str):
                raise _ApiError(400, "BAD_PARAM", "files must be file parts", "files")
            content = await upload.read()
            digest = blob_digest(content)
            filename = Path(upload.filename or "attachment").name or "attachment"
            media_type = upload.content_type or "application/octet-stream"
            attachments.append(Attachment(filename, media_type, len(content), digest))
            blobs[digest] = content
        if not text and not attachments:
            raise _ApiError(422, "EMPTY_COMMENT",
                            "a comment needs text or at least one file")
        draft = CommentDraft(
            author=author,
            created_at=now_ms(),
            text=text,
            origin=origin,
            attachments=tuple(attachments),
        )
        try:
            comment_id = repo.append_comment(partition, number, draft, blobs)
        except UnknownRun as exc:
            raise _ApiError(404, exc.code, str(exc)) from exc
        except (ObkError, ValueError) as exc:
            raise _ApiError(422, getattr(exc, "code", "INVALID"), str(exc)) from exc
        return {
            "comment_id": comment_id,
            "attachments": [codec.encode_attachment(a) for a in attachments],
        }

    @app.get("/api/v1/attachments/{digest}")
    def fetch_attachment(digest: str):
        repo = state.get_repo()
        meta = repo.find_attachment_meta(digest)
        try:
            content = repo.get_attachment(digest)
        except StorageError as exc:
            raise _ApiError(404, "UNKNOWN_ATTACHMENT", str(exc)) from exc
        media_type = meta.media_type if meta else "application/octet-stream"
        filename = meta.filename if meta else digest
        disposition = "inline" if media_type in config.inline_types else "attachment"
        return Response(
            content=content,
            media_type=media_type,
            headers={
                "Content-Disposition": f'{disposition}; filename="{filename}"'
            },
        )

    # -- auth endpoints --

    @app.post("/api/v1/auth/login")
    async def login(request: Request):
        body = await _json_body(request)
        username = _need_str(body, "username")
        password = _need_str(body, "password")
        user = None
        try:
            repo = state.get_repo()
            user = repo.get_user(username)
        except _ApiError:
            pass  # no repository yet: fall through to the dummy check
        stored = user.password_hash if user else DUMMY_HASH
        ok = verify_password(password, stored)
        if not ok or user is None:
            raise _ApiError(401, "BAD_CREDENTIALS", "unknown user or wrong password")
        session = state.tokens.issue(user.username, Role(user.role))
        return {
            "token": session.token,
            "username": session.username,
            "role": session.role.value,
            "expires_in": int(config.token_ttl_seconds),
        }

    @app.post("/api/v1/admin/users", status_code=201)
    async def put_user(request: Request):
        require_role(request, Role.ADMIN)
        repo = state.get_repo()
        body = await _json_body(request)
        username = _need_str(body, "username", allow_empty=False)
        password = _need_str(body, "password", allow_empty=False)
        role_raw = _need_str(body, "role")
        try:
            role = Role(role_raw)
        except ValueError:
            raise _ApiError(400, "BAD_PARAM", f"unknown role {role_raw!r}", "role")
        from .storage import UserRecord

        repo.put_user(UserRecord(username, hash_password(password), role.value))
        return {"username": username, "role": role.value}

    @app.post("/api/v1/admin/repositories", status_code=201)
    async def make_repository(request: Request):
        require_role(request, Role.ADMIN)
        body = await _json_body(request)
        backend_raw = _need_str(body, "backend")
        try:
            backend = BackendId(backend_raw)
        except ValueError:
            raise _ApiError(400, "BAD_PARAM",
                            f"unknown backend {backend_raw!r}", "backend")
        root = body.get("root", config.repository_root)
        if not isinstance(root, str) or not root:
            raise _ApiError(400, "BAD_PARAM", "root must be a path", "root")
        try:
            repo = create_repository(backend, root, **config.backend_options)
        except ObkError as exc:
            raise _ApiError(409, exc.code, str(exc)) from exc
        serves = Path(root).resolve() == Path(config.repository_root).resolve()
        if serves:
            state.bind_repo(repo)
        else:
            repo.close()
        return {"root": str(root), "backend": backend.value, "serving": serves}

    return app


# --- request parsing --------------------------------------------------------

def _parse_criteria(params) -> tuple[SearchCriteria, bool]:
    def bad(field: str, message: str) -> _ApiError:
        return _ApiError(400, "BAD_PARAM", message, field)

    status = None
    if "status" in params:
        raw = params["status"]
        if raw not in (RunStatus.GOOD.value, RunStatus.BAD.value):
            raise bad("status", f"status must be Good or Bad, got {raw!r}")
        status = RunStatus(raw)
    max_events = None
    if "max_events" in params:
        raw = params["max_events"]
        if not raw.isdigit():
            raise bad("max_events", "max_events must be a non-negative integer")
        max_events = int(raw)
    start_from = _parse_time_param(params, "start_from", bad)
    start_to = _parse_time_param(params, "start_to", bad)
    sort = SortKey.RUN_NUMBER
    if "sort" in params:
        try:
            sort = SortKey(params["sort"])
        except ValueError:
            raise bad("sort", f"sort must be one of "
                              f"{', '.join(k.value for k in SortKey)}")
    direction = SortDir.DESC
    if "dir" in params:
        try:
            direction = SortDir(params["dir"])
        except ValueError:
            raise bad("dir", "dir must be asc or desc")
    include_open = False
    if "include_open" in params:
        raw = params["include_open"]
        if raw not in ("true", "false"):
            raise bad("include_open", "include_open must be true or false")
        include_open = raw == "true"
    criteria = SearchCriteria(
        status=status,
        max_events_at_most=max_events,
        start_from=start_from,
        start_to=start_to,
        beam_type=params.get("beam_type"),
        trigger_type=params.get("trigger_type"),
        sort_key=sort,
        sort_dir=direction,
    )
    try:
        criteria.validate()
    except ValueError as exc:
        raise bad("start_from", str(exc))
    return criteria, include_open


def _parse_time_param(params, name: str, bad):
    if name not in params:
        return None
    try:
        return parse_timestamp(params[name])
    except ValueError:
        raise bad(name, f"{name} must be an ISO-8601 UTC timestamp "
                        "like 2002-08-14T12:30:00.000Z")


def _parse_int_path(raw: str, field: str) -> int:
    if not raw.isdigit():
        raise _ApiError(400, "BAD_PARAM", f"{field} must be a positive integer", field)
    return int(raw)


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise _ApiError(400, "BAD_PARAM", "request body must be JSON")
    if not isinstance(body, dict):
        raise _ApiError(400, "BAD_PARAM", "request body must be a JSON object")
    return body


def _need_str(body: dict, field: str, allow_empty: bool = True) -> str:
    v = body.get(field)
    if not isinstance(v, str) or (not allow_empty and not v):
        raise _ApiError(400, "BAD_PARAM", f"{field} must be a string", field)
    return v
