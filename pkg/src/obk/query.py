"""Read-side retrieval over a repository.

All operations are read only and backend agnostic: they see the repository
through the storage interface and never reach into backend files. Results
reflect whatever the backend has committed at call time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .errors import TypeMismatch
from .model import (
    RunHeader,
    RunStatus,
    Scalar,
    ScalarTag,
    SearchCriteria,
    SortDir,
    SortKey,
    TimestampMs,
)
from .storage import Repository, RunDetail, StoredRecord

__all__ = ["IsMatch", "Predicate", "find_is_instances", "find_runs", "get_run",
           "iterate_run_headers"]

PREDICATE_OPS = ("=", "<", ">", "contains")

_ORDERED_TAGS = frozenset({ScalarTag.INT, ScalarTag.FLOAT, ScalarTag.TIME})


@dataclass(frozen=True)
class Predicate:
    """Value constraint for IS attribute searches."""

    op: str
    value: Scalar

    def __post_init__(self):
        if self.op not in PREDICATE_OPS:
            raise ValueError(f"unknown predicate op {self.op!r}")

    def check_applicable(self) -> None:
        """Raises TypeMismatch when op and value type cannot combine."""
        if self.op in ("<", ">") and self.value.tag not in _ORDERED_TAGS:
            raise TypeMismatch(
                f"op {self.op!r} needs an ordered value, got {self.value.tag.value}"
            )
        if self.op == "contains" and self.value.tag is not ScalarTag.STR:
            raise TypeMismatch("op 'contains' needs a str value")

    def matches(self, stored: Scalar) -> bool:
        """Whether a stored value satisfies the predicate.

        Values of a different type than the predicate value never match;
        stored data cannot be assumed homogeneous per parameter name.
        """
        if stored.tag is not self.value.tag or stored.elem is not self.value.elem:
            return False
        if self.op == "=":
            return stored.value == self.value.value
        if self.op == "<":
            return stored.value < self.value.value
        if self.op == ">":
            return stored.value > self.value.value
        return self.value.value in stored.value


def find_runs(
    h: Repository, c: SearchCriteria, include_open: bool = False
) -> list[RunHeader]:
    """Headers matching every present criterion, ordered per the criteria.

    Open runs are excluded unless ``include_open``; ties under the sort key
    break by ascending (partition, run_number) in either direction.
    """
    c.validate()
    matches = [
        header
        for header in h.list_run_headers()
        if _header_matches(header, c, include_open)
    ]
    matches.sort(key=lambda r: (r.partition, r.run_number))
    matches.sort(key=_sort_value(c.sort_key), reverse=c.sort_dir is SortDir.DESC)
    return matches


def _header_matches(header: RunHeader, c: SearchCriteria, include_open: bool) -> bool:
    if header.status is RunStatus.OPEN and not include_open:
        return False
    if c.status is not None and header.status is not c.status:
        return False
    if c.max_events_at_most is not None and header.max_events > c.max_events_at_most:
        return False
    if c.start_from is not None and header.start_time < c.start_from:
        return False
    if c.start_to is not None and header.start_time > c.start_to:
        return False
    if c.beam_type is not None and header.beam_type.casefold() != c.beam_type.casefold():
        return False
    if c.trigger_type is not None and header.trigger_type != c.trigger_type:
        return False
    return True


def _sort_value(key: SortKey):
    if key is SortKey.RUN_NUMBER:
        return lambda r: r.run_number
    if key is SortKey.START_TIME:
        return lambda r: r.start_time
    return lambda r: r.num_events


def get_run(h: Repository, partition: str, run_number: int) -> RunDetail:
    """Full run detail with records in (timestamp, insertion seq) order."""
    detail = h.get_run_detail(partition, run_number)
    return RunDetail(
        header=detail.header,
        mrs=_time_ordered(detail.mrs),
        is_objects=_time_ordered(detail.is_objects),
        comments=_time_ordered(detail.comments),
    )


def _time_ordered(records: tuple[StoredRecord, ...]) -> tuple[StoredRecord, ...]:
    return tuple(sorted(records, key=lambda r: (r.timestamp, r.seq)))


@dataclass(frozen=True)
class IsMatch:
    partition: str
    run_number: int
    object_name: str
    timestamp: TimestampMs
    value: Scalar


def find_is_instances(
    h: Repository,
    partition: Optional[str],
    class_name: str,
    parameter_name: str,
    predicate: Optional[Predicate] = None,
) -> list[IsMatch]:
    """Occurrences of an IS class parameter across stored runs.

    One row per stored IsInfo carrying the parameter, ordered by
    (partition, run_number, timestamp).
    """
    if not class_name:
        raise ValueError("class_name must be non-empty")
    if not parameter_name:
        raise ValueError("parameter_name must be non-empty")
    if predicate is not None:
        predicate.check_applicable()
    rows: list[tuple[tuple, IsMatch]] = []
    partitions = [partition] if partition is not None else h.list_partitions()
    for part in partitions:
        for header in h.list_run_headers(part):
            detail = h.get_run_detail(part, header.run_number)
            for rec in detail.is_objects:
                info = rec.body
                if info.class_name != class_name:
                    continue
                for name, value in info.attributes:
                    if name != parameter_name:
                        continue
                    if predicate is not None and not predicate.matches(value):
                        continue
                    rows.append((
                        (part, header.run_number, info.timestamp, rec.seq),
                        IsMatch(part, header.run_number, info.object_name,
                                info.timestamp, value),
                    ))
    rows.sort(key=lambda kv: kv[0])
    return [m for _, m in rows]


def iterate_run_headers(h: Repository, partition: str) -> Iterator[RunHeader]:
    """Sequential cursor over one partition's headers in run_number order."""
    for header in h.list_run_headers(partition):
        yield header
