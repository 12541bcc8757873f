"""Publisher-facing acquisition: parse, filter, lifecycle, acknowledge.

Envelopes arrive as newline-delimited JSON over a stream socket. Each line
is parsed, checked against the subscription filter, then applied to the
partition's run lifecycle. The reply is `ok <seq>` once the record is
persisted, or `err <seq> <CODE>`; an acknowledged envelope has reached
storage before the ack is written.
"""

from __future__ import annotations

import itertools
import json
import logging
import socketserver
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .codec import parse_envelope
from .errors import CodecError, NoOpenRun, ObkError, SeqRegression, StorageError
from .model import (
    CommentPayload,
    EnvelopeKind,
    EorPayload,
    MessageEnvelope,
    RunHeader,
    RunStatus,
    Severity,
    SorPayload,
)
from .storage import Repository

log = logging.getLogger(__name__)

__all__ = [
    "AcquisitionServer",
    "EffectKind",
    "OrphanPolicy",
    "PartitionState",
    "StoreEffect",
    "SubscriptionFilter",
    "filter_accepts",
    "handle_envelope",
    "load_filter",
    "parse_envelope",
]


class OrphanPolicy(str, Enum):
    REJECT = "reject"
    STORE = "orphan-store"


@dataclass(frozen=True)
class SubscriptionFilter:
    """What this service subscribes to; None means no constraint.

    min_severity applies to MRS envelopes only, is_servers to IS only.
    """

    partitions: Optional[frozenset[str]] = None
    kinds: frozenset[EnvelopeKind] = frozenset(EnvelopeKind)
    min_severity: Optional[Severity] = None
    is_servers: Optional[frozenset[str]] = None

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("subscription filter must accept at least one kind")


WILDCARD_FILTER = SubscriptionFilter()


def filter_accepts(f: SubscriptionFilter, e: MessageEnvelope) -> bool:
    if f.partitions is not None and e.partition not in f.partitions:
        return False
    if e.kind not in f.kinds:
        return False
    if e.kind is EnvelopeKind.MRS and f.min_severity is not None:
        if e.payload.severity.rank < f.min_severity.rank:
            return False
    if e.kind is EnvelopeKind.IS and f.is_servers is not None:
        if e.payload.server not in f.is_servers:
            return False
    return True


def load_filter(path) -> SubscriptionFilter:
    """Read a subscription filter from a JSON file.

    Schema: {"partitions": ["TB", ...] or "*", "kinds": ["SOR", ...],
    "min_severity": "Error", "is_servers": ["DF", ...]}; every key optional.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("filter file must hold a JSON object")
    partitions = doc.get("partitions", "*")
    kinds = doc.get("kinds")
    return SubscriptionFilter(
        partitions=None if partitions == "*" else frozenset(partitions),
        kinds=frozenset(EnvelopeKind(k) for k in kinds)
        if kinds is not None
        else frozenset(EnvelopeKind),
        min_severity=Severity(doc["min_severity"]) if "min_severity" in doc else None,
        is_servers=frozenset(doc["is_servers"]) if "is_servers" in doc else None,
    )


@dataclass
class PartitionState:
    partition: str
    open_run: Optional[int] = None
    last_seq_by_connection: dict[str, int] = field(default_factory=dict)

    @classmethod
    def resume(cls, store: Repository, partition: str) -> "PartitionState":
        """State for a partition as left by a previous process."""
        return cls(partition, open_run=store.get_open_run(partition))

    def copy(self) -> "PartitionState":
        return PartitionState(
            self.partition, self.open_run, dict(self.last_seq_by_connection)
        )


class EffectKind(str, Enum):
    OPENED = "opened"
    CLOSED = "closed"
    STORED = "stored"
    ORPHANED = "orphaned"


@dataclass(frozen=True)
class StoreEffect:
    kind: EffectKind
    run_number: Optional[int] = None
    seq: Optional[int] = None


def handle_envelope(
    state: PartitionState,
    e: MessageEnvelope,
    store: Repository,
    connection_id: str = "",
    orphan_policy: OrphanPolicy = OrphanPolicy.REJECT,
) -> StoreEffect:
    """Apply one filtered envelope to the partition lifecycle.

    Mutates ``state``. A sequence regression rejects the envelope without
    consuming its seq; any later rejection (lifecycle or storage) consumes
    it, since the envelope was well-formed and in order.
    """
    if state.partition != e.partition:
        raise ValueError("envelope partition does not match state")
    last = state.last_seq_by_connection.get(connection_id, 0)
    if e.seq <= last:
        raise SeqRegression(
            f"seq {e.seq} not above {last} for connection {connection_id or '<local>'}"
        )
    state.last_seq_by_connection[connection_id] = e.seq

    try:
        return _apply(state, e, store, orphan_policy)
    except StorageError:
        # Storage is the ground truth; an admin may have force-closed the
        # run behind this process's back. Resync so later envelopes see
        # the real lifecycle position.
        state.open_run = store.get_open_run(e.partition)
        raise


def _apply(
    state: PartitionState,
    e: MessageEnvelope,
    store: Repository,
    orphan_policy: OrphanPolicy,
) -> StoreEffect:
    if e.kind is EnvelopeKind.SOR:
        p: SorPayload = e.payload
        header = RunHeader(
            partition=e.partition,
            run_number=p.run_number,
            start_time=e.timestamp,
            end_time=None,
            status=RunStatus.OPEN,
            num_events=0,
            max_events=p.max_events,
            trigger_type=p.trigger_type,
            beam_type=p.beam_type,
            detector_mask=p.detector_mask,
        )
        store.begin_run(header)
        state.open_run = p.run_number
        return StoreEffect(EffectKind.OPENED, run_number=p.run_number)

    if e.kind is EnvelopeKind.EOR:
        if state.open_run is None:
            raise NoOpenRun(f"EOR with no open run in partition {e.partition!r}")
        p: EorPayload = e.payload
        run_number = state.open_run
        store.end_run(e.partition, run_number, p.status, p.num_events, e.timestamp)
        state.open_run = None
        return StoreEffect(EffectKind.CLOSED, run_number=run_number)

    if state.open_run is None:
        if orphan_policy is OrphanPolicy.REJECT:
            raise NoOpenRun(
                f"{e.kind.value} with no open run in partition {e.partition!r}"
            )
        # Orphaned comments keep attachment metadata only; with no run to
        # anchor them to, blob contents are dropped.
        body = e.payload.draft.with_id(0) if e.kind is EnvelopeKind.COMMENT else e.payload
        seq = store.append_orphan(e.partition, e.kind, body)
        return StoreEffect(EffectKind.ORPHANED, seq=seq)

    run_number = state.open_run
    if e.kind is EnvelopeKind.MRS:
        seq = store.append_mrs(e.partition, run_number, e.payload)
        return StoreEffect(EffectKind.STORED, run_number=run_number, seq=seq)
    if e.kind is EnvelopeKind.IS:
        seq = store.append_is(e.partition, run_number, e.payload)
        return StoreEffect(EffectKind.STORED, run_number=run_number, seq=seq)
    cp: CommentPayload = e.payload
    comment_id = store.append_comment(e.partition, run_number, cp.draft, cp.blobs)
    return StoreEffect(EffectKind.STORED, run_number=run_number, seq=comment_id)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        owner: AcquisitionServer = self.server.owner  # type: ignore[attr-defined]
        connection_id = f"conn-{next(owner._conn_counter)}"
        while True:
            try:
                line = self.rfile.readline()
            except OSError:
                return
            if not line:
                return
            if line.strip() == b"":
                continue
            reply = owner._process_line(line, connection_id)
            try:
                self.wfile.write(reply.encode("ascii") + b"\n")
                self.wfile.flush()
            except OSError:
                return


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class AcquisitionServer:
    """Accepts publisher connections and routes envelopes into storage."""

    def __init__(
        self,
        store: Repository,
        host: str = "127.0.0.1",
        port: int = 0,
        subscription: Optional[SubscriptionFilter] = None,
        orphan_policy: OrphanPolicy = OrphanPolicy.REJECT,
    ):
        self.store = store
        self.subscription = subscription or WILDCARD_FILTER
        self.orphan_policy = OrphanPolicy(orphan_policy)
        self._states: dict[str, PartitionState] = {}
        self._states_lock = threading.Lock()
        self._partition_locks: dict[str, threading.Lock] = {}
        self._conn_counter = itertools.count(1)
        self.counters = {"ok": 0, "err": 0}
        self._counter_lock = threading.Lock()
        self._tcp = _TcpServer((host, port), _Handler)
        self._tcp.owner = self  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def _state_for(self, partition: str) -> tuple[PartitionState, threading.Lock]:
        with self._states_lock:
            if partition not in self._states:
                self._states[partition] = PartitionState.resume(self.store, partition)
                self._partition_locks[partition] = threading.Lock()
            return self._states[partition], self._partition_locks[partition]

    def _process_line(self, line: bytes, connection_id: str) -> str:
        try:
            envelope = parse_envelope(line)
        except CodecError as exc:
            seq = _seq_hint(line)
            self._bump("err", exc.code)
            return f"err {seq} {exc.code}"
        if not filter_accepts(self.subscription, envelope):
            self._bump("err", "FILTERED")
            return f"err {envelope.seq} FILTERED"
        state, lock = self._state_for(envelope.partition)
        try:
            with lock:
                handle_envelope(
                    state,
                    envelope,
                    self.store,
                    connection_id=connection_id,
                    orphan_policy=self.orphan_policy,
                )
        except ObkError as exc:
            self._bump("err", exc.code)
            return f"err {envelope.seq} {exc.code}"
        except Exception:
            log.exception("unexpected failure while handling envelope")
            self._bump("err", "INTERNAL")
            return f"err {envelope.seq} INTERNAL"
        self._bump("ok", None)
        return f"ok {envelope.seq}"

    def _bump(self, outcome: str, code: Optional[str]) -> None:
        with self._counter_lock:
            self.counters[outcome] += 1
            if code:
                key = f"err:{code}"
                self.counters[key] = self.counters.get(key, 0) + 1

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._tcp.serve_forever, name="obk-acquisition", daemon=True
        )
        self._thread.start()
        host, port = self.address
        print(f"listening on {host}:{port}", flush=True)

    def serve_forever(self) -> None:
        host, port = self.address
        print(f"listening on {host}:{port}", flush=True)
        self._tcp.serve_forever()

    def stop(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None


def _seq_hint(line: bytes) -> int:
    """Best-effort seq for the err reply to an unparseable envelope."""
    try:
        obj = json.loads(line)
        seq = obj.get("seq")
        if isinstance(seq, int) and not isinstance(seq, bool) and seq >= 0:
            return seq
    except Exception:
        pass
    return 0
