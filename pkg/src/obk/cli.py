"""Command line entry points: one binary, one verb per job.

    obk acquire    run the acquisition server
    obk comment    add a comment, directly or through a running service
    obk query      search runs or IS parameter values
    obk admin      repository and user administration
    obk bench      latency and scalability measurements
    obk serve      run the HTTP logbook service
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import codec
from .auth import Role, hash_password
from .errors import ObkError
from .ingest import AcquisitionServer, OrphanPolicy, load_filter
from .model import (
    CommentDraft,
    CommentOrigin,
    RunStatus,
    Scalar,
    ScalarTag,
    SearchCriteria,
    SortDir,
    SortKey,
    format_timestamp,
    detector_mask_format,
    now_ms,
    parse_timestamp,
)
from .query import Predicate, find_is_instances, find_runs
from .storage import (
    BackendId,
    UserRecord,
    blob_digest,
    create_repository,
    export_canonical,
    open_repository,
    read_meta,
)

RUN_COLUMNS = ("Partition", "Run", "Start", "End", "Status", "Events",
               "MaxEvents", "Trigger", "DetectorMask", "Beam")


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _open_repo(root: str, writable: bool = True, **options):
    try:
        return open_repository(root, writable=writable, **options)
    except ObkError as exc:
        raise _fail(str(exc))


@click.group()
@click.version_option(package_name="obk")
def main() -> None:
    """Run bookkeeping: acquisition, query, comments and administration."""


# --- acquire ----------------------------------------------------------------

@main.command()
@click.option("--listen", default="127.0.0.1:0", show_default=True,
              help="HOST:PORT to accept publishers on (port 0 picks one).")
@click.option("--backend", type=click.Choice([b.value for b in BackendId]),
              default=None, help="Create the repository with this backend "
                                 "when ROOT is not initialized yet.")
@click.option("--root", required=True, type=click.Path(), help="Repository root.")
@click.option("--filter", "filter_file", type=click.Path(exists=True),
              default=None, help="Subscription filter JSON file.")
@click.option("--orphan", type=click.Choice([p.value for p in OrphanPolicy]),
              default=OrphanPolicy.REJECT.value, show_default=True,
              help="What to do with data that has no open run.")
@click.option("--commit-mode", type=click.Choice(["durable", "buffered"]),
              default="durable", show_default=True,
              help="Relational backend commit durability.")
def acquire(listen, backend, root, filter_file, orphan, commit_mode):
    """Accept publisher connections and store their envelopes."""
    host, _, port_raw = listen.rpartition(":")
    if not host or not port_raw.isdigit():
        raise _fail(f"--listen must be HOST:PORT, got {listen!r}")
    options = {}
    if backend is None or BackendId(backend) is BackendId.RELATIONAL:
        options["commit_mode"] = commit_mode
    repo = _acquire_repo(root, backend, options)
    subscription = load_filter(filter_file) if filter_file else None
    server = AcquisitionServer(
        repo, host=host, port=int(port_raw), subscription=subscription,
        orphan_policy=OrphanPolicy(orphan),
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        repo.close()


def _acquire_repo(root, backend, options):
    root_path = Path(root)
    meta_missing = not (root_path / "obk-meta.json").exists()
    if meta_missing:
        if backend is None:
            raise _fail(f"{root} is not a repository; pass --backend to create it")
        return create_repository(BackendId(backend), root, **options)
    meta = read_meta(root_path)
    if backend is not None and meta["backend"] != backend:
        raise _fail(
            f"{root} is a {meta['backend']} repository, not {backend}"
        )
    if meta["backend"] != BackendId.RELATIONAL.value:
        options = {k: v for k, v in options.items() if k != "commit_mode"}
    return _open_repo(root, **options)


# --- comment ----------------------------------------------------------------

@main.command()
@click.option("--root", type=click.Path(), default=None,
              help="Repository root (offline mode).")
@click.option("--server", envvar="OBK_SERVER", default=None,
              help="Service base URL (online mode); env OBK_SERVER.")
@click.option("--token", envvar="OBK_TOKEN", default=None,
              help="Bearer token for online mode; env OBK_TOKEN.")
@click.option("--partition", required=True)
@click.option("--run", "run_number", required=True, type=int)
@click.option("--author", required=True)
@click.option("--text", default="", help="Comment text.")
@click.option("--attach", "attachments", multiple=True, type=click.Path(),
              help="File to attach; repeatable.")
def comment(root, server, token, partition, run_number, author, text, attachments):
    """Attach a comment to a run, writing directly or via the service."""
    if (root is None) == (server is None):
        raise _fail("pass exactly one of --root (offline) or --server (online)")
    files = []
    for name in attachments:
        path = Path(name)
        if not path.is_file():
            raise _fail(f"attachment {name} does not exist")
        files.append((path.name, path.read_bytes()))
    if not text and not files:
        raise _fail("a comment needs --text or at least one --attach")
    if root is not None:
        _comment_offline(root, partition, run_number, author, text, files)
    else:
        _comment_online(server, token, partition, run_number, author, text, files)


def _comment_offline(root, partition, run_number, author, text, files):
    from .model import Attachment

    blobs = {}
    atts = []
    for filename, content in files:
        digest = blob_digest(content)
        atts.append(Attachment(filename, _guess_media_type(filename),
                               len(content), digest))
        blobs[digest] = content
    draft = CommentDraft(author=author, created_at=now_ms(), text=text,
                         origin=CommentOrigin.OFFLINE, attachments=tuple(atts))
    repo = _open_repo(root)
    try:
        comment_id = repo.append_comment(partition, run_number, draft, blobs)
    except ObkError as exc:
        raise _fail(str(exc))
    finally:
        repo.close()
    click.echo(f"comment {comment_id} added to {partition} run {run_number}")


def _comment_online(server, token, partition, run_number, author, text, files):
    import httpx

    if not token:
        raise _fail("online mode needs --token or OBK_TOKEN")
    url = f"{server.rstrip('/')}/api/v1/runs/{partition}/{run_number}/comments"
    multipart = [("files", (name, content, _guess_media_type(name)))
                 for name, content in files]
    try:
        response = httpx.post(
            url,
            data={"text": text, "author": author,
                  "origin": CommentOrigin.OFFLINE.value},
            files=multipart,
            headers={"Authorization": f"Bearer {token}"},
            timeout=30.0,
        )
    except httpx.HTTPError as exc:
        raise _fail(f"cannot reach {server}: {exc}")
    if response.status_code != 201:
        raise _fail(f"service rejected the comment: {response.status_code} "
                    f"{response.text}")
    comment_id = response.json()["comment_id"]
    click.echo(f"comment {comment_id} added to {partition} run {run_number}")


def _guess_media_type(filename: str) -> str:
    import mimetypes

    guessed, _ = mimetypes.guess_type(filename)
    return guessed or "application/octet-stream"


# --- query ------------------------------------------------------------------

@main.group()
def query() -> None:
    """Search stored runs and IS values."""


@query.command("runs")
@click.option("--root", required=True, type=click.Path())
@click.option("--status", type=click.Choice(["Good", "Bad"]), default=None)
@click.option("--beam", default=None, help="Beam type, case-insensitive.")
@click.option("--trigger", default=None, help="Trigger type, exact.")
@click.option("--max-events", type=int, default=None,
              help="Only runs with MaxEvents at most this.")
@click.option("--from", "start_from", default=None,
              help="Start of the start-time interval (ISO UTC).")
@click.option("--to", "start_to", default=None,
              help="End of the start-time interval (ISO UTC).")
@click.option("--sort", type=click.Choice([k.value for k in SortKey]),
              default=SortKey.RUN_NUMBER.value, show_default=True)
@click.option("--dir", "direction", type=click.Choice(["asc", "desc"]),
              default="desc", show_default=True)
@click.option("--include-open", is_flag=True, default=False)
@click.option("--format", "fmt", type=click.Choice(["table", "json", "csv"]),
              default="table", show_default=True)
def query_runs(root, status, beam, trigger, max_events, start_from, start_to,
               sort, direction, include_open, fmt):
    """List runs matching the given criteria."""
    criteria = SearchCriteria(
        status=RunStatus(status) if status else None,
        max_events_at_most=max_events,
        start_from=_parse_time_flag(start_from, "--from"),
        start_to=_parse_time_flag(start_to, "--to"),
        beam_type=beam,
        trigger_type=trigger,
        sort_key=SortKey(sort),
        sort_dir=SortDir(direction),
    )
    try:
        criteria.validate()
    except ValueError as exc:
        raise _fail(str(exc))
    repo = _open_repo(root, writable=False)
    try:
        headers = find_runs(repo, criteria, include_open=include_open)
    finally:
        repo.close()
    if fmt == "json":
        click.echo(json.dumps([codec.encode_run_header(h) for h in headers],
                              indent=2, ensure_ascii=False))
        return
    rows = [_run_row(h) for h in headers]
    if fmt == "csv":
        _write_csv(RUN_COLUMNS, rows)
    else:
        _write_table(RUN_COLUMNS, rows)


def _run_row(h) -> tuple:
    return (
        h.partition,
        str(h.run_number),
        format_timestamp(h.start_time),
        format_timestamp(h.end_time) if h.end_time is not None else "",
        h.status.value,
        str(h.num_events),
        str(h.max_events),
        h.trigger_type,
        detector_mask_format(h.detector_mask),
        h.beam_type,
    )


def _parse_time_flag(raw, flag):
    if raw is None:
        return None
    try:
        return parse_timestamp(raw)
    except ValueError:
        raise _fail(f"{flag} must look like 2002-08-14T12:30:00.000Z, got {raw!r}")


@query.command("is")
@click.option("--root", required=True, type=click.Path())
@click.option("--class", "class_name", required=True, help="IS class name.")
@click.option("--param", "parameter", required=True, help="Attribute name.")
@click.option("--partition", default=None)
@click.option("--where", nargs=2, default=None,
              metavar="OP VALUE", help="Value predicate: = | < | > | contains.")
@click.option("--value-type",
              type=click.Choice(["int", "float", "bool", "str", "time"]),
              default=None, help="Force the predicate value type "
                                 "(default: inferred).")
@click.option("--format", "fmt", type=click.Choice(["table", "json", "csv"]),
              default="table", show_default=True)
def query_is(root, class_name, parameter, partition, where, value_type, fmt):
    """List stored values of an IS class parameter."""
    predicate = None
    if where is not None:
        op, raw = where
        try:
            predicate = Predicate(op, _parse_scalar_flag(raw, value_type))
            predicate.check_applicable()
        except (ValueError, ObkError) as exc:
            raise _fail(str(exc))
    repo = _open_repo(root, writable=False)
    try:
        matches = find_is_instances(repo, partition, class_name, parameter,
                                    predicate)
    except ObkError as exc:
        raise _fail(str(exc))
    finally:
        repo.close()
    if fmt == "json":
        click.echo(json.dumps([
            {
                "partition": m.partition,
                "run_number": m.run_number,
                "object_name": m.object_name,
                "timestamp": format_timestamp(m.timestamp),
                "value": codec.encode_scalar(m.value),
            }
            for m in matches
        ], indent=2, ensure_ascii=False))
        return
    columns = ("Partition", "Run", "Object", "Timestamp", "Value")
    rows = [
        (m.partition, str(m.run_number), m.object_name,
         format_timestamp(m.timestamp),
         json.dumps(codec.encode_scalar(m.value), separators=(",", ":"),
                    ensure_ascii=False))
        for m in matches
    ]
    if fmt == "csv":
        _write_csv(columns, rows)
    else:
        _write_table(columns, rows)


def _parse_scalar_flag(raw: str, value_type) -> Scalar:
    if value_type == "int":
        return Scalar.of_int(int(raw))
    if value_type == "float":
        return Scalar.of_float(float(raw))
    if value_type == "bool":
        if raw not in ("true", "false"):
            raise ValueError("bool value must be true or false")
        return Scalar.of_bool(raw == "true")
    if value_type == "time":
        return Scalar.of_time(parse_timestamp(raw))
    if value_type == "str":
        return Scalar.of_str(raw)
    # inference: int, then float, then bool, then timestamp, else str
    try:
        return Scalar.of_int(int(raw))
    except ValueError:
        pass
    try:
        return Scalar.of_float(float(raw))
    except ValueError:
        pass
    if raw in ("true", "false"):
        return Scalar.of_bool(raw == "true")
    try:
        return Scalar.of_time(parse_timestamp(raw))
    except ValueError:
        pass
    return Scalar.of_str(raw)


# --- admin ------------------------------------------------------------------

@main.group()
def admin() -> None:
    """Repository and user administration."""


@admin.command("init")
@click.option("--backend", type=click.Choice([b.value for b in BackendId]),
              required=True)
@click.option("--root", required=True, type=click.Path())
def admin_init(backend, root):
    """Create an empty repository."""
    try:
        repo = create_repository(BackendId(backend), root)
    except ObkError as exc:
        raise _fail(str(exc))
    repo.close()
    click.echo(f"initialized {backend} repository at {root}")


@admin.group("user")
def admin_user() -> None:
    """Manage user accounts stored in the repository."""


@admin_user.command("add")
@click.option("--root", required=True, type=click.Path())
@click.option("--username", required=True)
@click.option("--password", prompt=True, hide_input=True)
@click.option("--role", type=click.Choice([r.value for r in Role]),
              default=Role.READER.value, show_default=True)
def user_add(root, username, password, role):
    repo = _open_repo(root)
    try:
        if repo.get_user(username) is not None:
            raise _fail(f"user {username!r} already exists")
        repo.put_user(UserRecord(username, hash_password(password), role))
    finally:
        repo.close()
    click.echo(f"user {username} added with role {role}")


@admin_user.command("passwd")
@click.option("--root", required=True, type=click.Path())
@click.option("--username", required=True)
@click.option("--password", prompt=True, hide_input=True)
def user_passwd(root, username, password):
    repo = _open_repo(root)
    try:
        user = repo.get_user(username)
        if user is None:
            raise _fail(f"no user {username!r}")
        repo.put_user(UserRecord(username, hash_password(password), user.role))
    finally:
        repo.close()
    click.echo(f"password updated for {username}")


@admin_user.command("role")
@click.option("--root", required=True, type=click.Path())
@click.option("--username", required=True)
@click.option("--role", type=click.Choice([r.value for r in Role]), required=True)
def user_role(root, username, role):
    repo = _open_repo(root)
    try:
        user = repo.get_user(username)
        if user is None:
            raise _fail(f"no user {username!r}")
        repo.put_user(UserRecord(username, user.password_hash, role))
    finally:
        repo.close()
    click.echo(f"role of {username} set to {role}")


@admin.command("force-close")
@click.option("--root", required=True, type=click.Path())
@click.option("--partition", required=True)
@click.option("--run", "run_number", required=True, type=int)
def admin_force_close(root, partition, run_number):
    """Close an abandoned Open run as Bad."""
    repo = _open_repo(root)
    try:
        header = repo.force_close(partition, run_number)
    except ObkError as exc:
        raise _fail(str(exc))
    finally:
        repo.close()
    click.echo(f"run {run_number} in {partition} closed as {header.status.value}")


@admin.command("export")
@click.option("--root", required=True, type=click.Path())
@click.option("-o", "--output", type=click.Path(), default=None,
              help="Write to a file instead of stdout.")
def admin_export(root, output):
    """Write the canonical repository export."""
    repo = _open_repo(root, writable=False)
    try:
        data = export_canonical(repo)
    finally:
        repo.close()
    if output:
        Path(output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)


# --- bench ------------------------------------------------------------------

def _workload_options(fn):
    for option in reversed([
        click.option("--runs", "num_runs", type=int, default=500,
                     show_default=True),
        click.option("--mrs", "mrs_per_run", type=int, default=2,
                     show_default=True),
        click.option("--is", "is_per_run", type=int, default=20,
                     show_default=True),
        click.option("--comments", "comments_per_run", type=int, default=1,
                     show_default=True),
        click.option("--attrs", "is_attrs_per_object", type=int, default=5,
                     show_default=True),
        click.option("--seed", type=int, default=1, show_default=True),
    ]):
        fn = option(fn)
    return fn


def _make_spec(num_runs, mrs_per_run, is_per_run, comments_per_run,
               is_attrs_per_object, seed):
    from .bench import WorkloadSpec

    return WorkloadSpec(
        num_runs=num_runs, mrs_per_run=mrs_per_run, is_per_run=is_per_run,
        comments_per_run=comments_per_run,
        is_attrs_per_object=is_attrs_per_object, seed=seed,
    )


@main.group()
def bench() -> None:
    """Storage latency and concurrency measurements."""


@bench.command("latency")
@_workload_options
@click.option("--backend", type=click.Choice([b.value for b in BackendId]),
              required=True)
@click.option("--commit-mode", type=click.Choice(["durable", "buffered"]),
              default="durable", show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Directory for CSV and .dat reports.")
@click.option("--work", type=click.Path(), default=None,
              help="Where to build the measured repository "
                   "(default: a temp directory).")
def bench_latency(num_runs, mrs_per_run, is_per_run, comments_per_run,
                  is_attrs_per_object, seed, backend, commit_mode, out, work):
    """Per-operation storage latency over a growing repository."""
    import tempfile

    from .bench import run_latency_bench

    spec = _make_spec(num_runs, mrs_per_run, is_per_run, comments_per_run,
                      is_attrs_per_object, seed)
    options = {"commit_mode": commit_mode} if backend == "relational" else {}
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(work) / "latency_repo" if work else Path(tmp) / "repo"
        report = run_latency_bench(spec, backend, root, out_dir=out, **options)
    for row in report.summary_rows():
        slope = (f"  slope {row['slope_us_per_run']:+.3f} us/run"
                 if "slope_us_per_run" in row else "")
        click.echo(
            f"{row['op']:>8}: n={row['count']:<6} median "
            f"{row['median_us']:.1f} us  mean {row['mean_us']:.1f} us{slope}"
        )
    click.echo(f"reports written to {out}")


@bench.command("scale")
@_workload_options
@click.option("--backend", type=click.Choice([b.value for b in BackendId]),
              required=True)
@click.option("--publishers", default="1,2,4,8", show_default=True,
              help="Comma-separated concurrency levels.")
@click.option("--out", required=True, type=click.Path())
def bench_scale(num_runs, mrs_per_run, is_per_run, comments_per_run,
                is_attrs_per_object, seed, backend, publishers, out):
    """End-to-end throughput at increasing publisher concurrency."""
    import tempfile

    from .bench import run_scalability_bench

    try:
        levels = tuple(int(p) for p in publishers.split(","))
    except ValueError:
        raise _fail(f"--publishers must be integers, got {publishers!r}")
    spec = _make_spec(num_runs, mrs_per_run, is_per_run, comments_per_run,
                      is_attrs_per_object, seed)
    with tempfile.TemporaryDirectory() as tmp:
        points = run_scalability_bench(spec, backend, levels, tmp, out_dir=out)
    for p in points:
        click.echo(
            f"{p.publishers:>3} publishers: mean {p.mean_us:.1f} us, "
            f"p95 {p.p95_us:.1f} us, {p.messages} messages, no loss"
        )
    click.echo(f"reports written to {out}")


@bench.command("compare")
@_workload_options
@click.option("--out", required=True, type=click.Path())
def bench_compare(num_runs, mrs_per_run, is_per_run, comments_per_run,
                  is_attrs_per_object, seed, out):
    """Same workload into every backend; checks export equality."""
    import tempfile

    from .bench import compare_backends

    spec = _make_spec(num_runs, mrs_per_run, is_per_run, comments_per_run,
                      is_attrs_per_object, seed)
    with tempfile.TemporaryDirectory() as tmp:
        result = compare_backends(spec, tmp, out_dir=out)
    for report in result.reports:
        for row in report.summary_rows():
            click.echo(f"{report.label:>20} {row['op']:>8}: median "
                       f"{row['median_us']:.1f} us")
    click.echo(f"exports equal: {result.exports_equal}")
    if not result.exports_equal:
        raise _fail("backend exports differ")


# --- serve ------------------------------------------------------------------

@main.command()
@click.option("--config", "config_file", type=click.Path(exists=True),
              default=None, help="Service config JSON.")
@click.option("--root", type=click.Path(), default=None,
              help="Repository root (overrides config).")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_file, root, host, port):
    """Run the HTTP logbook service."""
    import uvicorn

    from .service import ServiceConfig, create_app, load_config

    config = load_config(config_file) if config_file else ServiceConfig()
    if root is not None:
        config.repository_root = root
    if host is not None:
        config.host = host
    if port is not None:
        config.port = port
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


# --- output helpers ---------------------------------------------------------

def _write_table(columns, rows) -> None:
    widths = [len(c) for c in columns]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    line = "  ".join(c.ljust(widths[i]) for i, c in enumerate(columns))
    click.echo(line.rstrip())
    click.echo("  ".join("-" * w for w in widths))
    for row in rows:
        click.echo("  ".join(cell.ljust(widths[i])
                             for i, cell in enumerate(row)).rstrip())


def _write_csv(columns, rows) -> None:
    import csv

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)


if __name__ == "__main__":
    main()
