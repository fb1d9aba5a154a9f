"""Release records, metric normalization and CSV persistence of the release history."""

from __future__ import annotations

import csv
import enum
import io
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, IntervalError

FEATURES: tuple[str, ...] = ("P1", "P2", "P3", "P4", "P5", "P6")
HEADER: tuple[str, ...] = FEATURES + ("ID", "DATE", "FLAG")
TABLE_HEADER: tuple[str, ...] = FEATURES + ("ID", "DATE")


class Flag(enum.Enum):
    """Gate outcome stored with each release; ``value`` is the CSV code."""

    UNSET = ""
    OK = "0"
    ANOMALY = "1"
    REVIEW = "2"

    @classmethod
    def from_code(cls, code: str) -> Flag:
        try:
            return cls(code.strip())
        except ValueError:
            raise ValueError(f"unknown FLAG value {code!r}") from None

    @classmethod
    def from_name(cls, name: str) -> Flag:
        return cls[name.upper()]


@dataclass(frozen=True)
class RawActivityCounts:
    """Un-normalized event counts for one release window ``(window_start, window_end]``."""

    lines_changed: int = 0
    commits: int = 0
    failed_builds: int = 0
    failed_tests: int = 0
    failed_deliveries: int = 0
    quality_issues: int = 0
    repo_issues: int = 0
    window_start: date = date(1970, 1, 1)
    window_end: date = date(1970, 1, 2)

    def __post_init__(self) -> None:
        for name in (
            "lines_changed",
            "commits",
            "failed_builds",
            "failed_tests",
            "failed_deliveries",
            "quality_issues",
            "repo_issues",
        ):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {value!r}")
        if self.window_start > self.window_end:
            raise ValueError(
                f"window_start {self.window_start} is after window_end {self.window_end}"
            )

    def is_empty(self) -> bool:
        return not any(
            (
                self.lines_changed,
                self.commits,
                self.failed_builds,
                self.failed_tests,
                self.failed_deliveries,
                self.quality_issues,
                self.repo_issues,
            )
        )


@dataclass(frozen=True)
class ReleaseRecord:
    """One row of the release dataset: the six normalized metrics plus metadata."""

    id: int
    date: date
    p1: float = 0.0
    p2: float = 0.0
    p3: float = 0.0
    p4: float = 0.0
    p5: float = 0.0
    p6: float = 0.0
    flag: Flag = Flag.UNSET

    def __post_init__(self) -> None:
        if isinstance(self.id, bool) or int(self.id) != self.id or self.id < 1:
            raise ValueError(f"id must be a positive integer, got {self.id!r}")
        for name, value in zip(FEATURES, self.features):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")

    @property
    def features(self) -> tuple[float, ...]:
        return (self.p1, self.p2, self.p3, self.p4, self.p5, self.p6)

    def with_flag(self, flag: Flag) -> ReleaseRecord:
        return replace(self, flag=flag)

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "date": self.date.isoformat()}
        for name, value in zip(FEATURES, self.features):
            out[name.lower()] = value
        out["flag"] = self.flag.name.lower()
        return out

    @classmethod
    def from_json(cls, payload: dict) -> ReleaseRecord:
        return cls(
            id=int(payload["id"]),
            date=date.fromisoformat(payload["date"]),
            p1=float(payload["p1"]),
            p2=float(payload["p2"]),
            p3=float(payload["p3"]),
            p4=float(payload["p4"]),
            p5=float(payload["p5"]),
            p6=float(payload["p6"]),
            flag=Flag.from_name(payload.get("flag", "unset")),
        )


@dataclass(frozen=True)
class ReleaseDataset:
    """Ordered release history. Ids strictly increase and dates never decrease."""

    records: tuple[ReleaseRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for pos in range(1, len(self.records)):
            _check_order(self.records[pos - 1], self.records[pos], pos + 1)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return ReleaseDataset(self.records[index])
        return self.records[index]

    @property
    def last(self) -> ReleaseRecord | None:
        return self.records[-1] if self.records else None

    @property
    def ids(self) -> list[int]:
        return [r.id for r in self.records]

    def by_id(self, release_id: int) -> ReleaseRecord:
        for record in self.records:
            if record.id == release_id:
                return record
        raise KeyError(release_id)

    def feature_array(self) -> np.ndarray:
        """Return the ``(n, 6)`` matrix of P1..P6 values."""
        if not self.records:
            return np.empty((0, len(FEATURES)))
        return np.array([r.features for r in self.records], dtype=float)

    def appended(self, record: ReleaseRecord) -> ReleaseDataset:
        if self.records:
            _check_order(self.records[-1], record, len(self.records) + 1)
        return ReleaseDataset(self.records + (record,))


def _check_order(prev: ReleaseRecord, cur: ReleaseRecord, row: int) -> None:
    if cur.id == prev.id:
        raise DatasetError(f"duplicate id {cur.id}", row=row)
    if cur.id < prev.id:
        raise DatasetError(f"id {cur.id} is not greater than previous id {prev.id}", row=row)
    if cur.date < prev.date:
        raise DatasetError(f"date {cur.date} precedes previous date {prev.date}", row=row)


def working_days(start: date, end: date, holidays: Sequence[date] = ()) -> int:
    """Count weekdays in the half-open interval ``(start, end]``.

    Returns 0 when the interval holds only a weekend.
    """
    if start >= end:
        raise IntervalError(f"invalid interval: {start} is not before {end}")
    first = start + timedelta(days=1)
    stop = end + timedelta(days=1)
    return int(np.busday_count(first, stop, holidays=list(holidays)))


def normalize(
    raw: RawActivityCounts,
    prev_release_date: date,
    release_date: date,
    id: int,
) -> ReleaseRecord:
    """Turn raw window counts into a release record, dividing by elapsed working days."""
    w = max(working_days(prev_release_date, release_date), 1)
    p1 = (raw.lines_changed / raw.commits) / w if raw.commits > 0 else 0.0
    return ReleaseRecord(
        id=id,
        date=release_date,
        p1=p1,
        p2=raw.failed_builds / w,
        p3=raw.failed_tests / w,
        p4=raw.failed_deliveries / w,
        p5=raw.quality_issues / w,
        p6=raw.repo_issues / w,
        flag=Flag.UNSET,
    )


def parse_date(text: str) -> date:
    """Parse ISO ``YYYY-MM-DD`` or Table-style ``M/D/YYYY``."""
    text = text.strip()
    if "/" in text:
        return datetime.strptime(text, "%m/%d/%Y").date()
    return date.fromisoformat(text)


def format_value(value: float) -> str:
    """At most two decimals, trailing zeros trimmed: 22.57, 0.04, 59."""
    text = f"{round(value, 2):.2f}".rstrip("0").rstrip(".")
    return "0" if text in ("", "-0") else text


def load_dataset(path: str | os.PathLike) -> ReleaseDataset:
    """Read a dataset CSV (with or without the FLAG column)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        return parse_dataset(fh.read())


def parse_dataset(text: str) -> ReleaseDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetError("missing header", row=1) from None
    if tuple(header) not in (HEADER, TABLE_HEADER):
        raise DatasetError(f"unexpected header {','.join(header)}", row=1)
    has_flag = len(header) == len(HEADER)

    records: list[ReleaseRecord] = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(f"expected {len(header)} columns, got {len(row)}", row=row_no)
        try:
            values = [float(c) for c in row[:6]]
            rid = int(row[6])
            rdate = parse_date(row[7])
            flag = Flag.from_code(row[8]) if has_flag else Flag.UNSET
            record = ReleaseRecord(rid, rdate, *values, flag=flag)
        except ValueError as exc:
            raise DatasetError(str(exc), row=row_no) from None
        if records:
            _check_order(records[-1], record, row_no)
        records.append(record)
    return ReleaseDataset(tuple(records))


def render_dataset(records: Iterable[ReleaseRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow(
            [format_value(v) for v in r.features] + [r.id, r.date.isoformat(), r.flag.value]
        )
    return buf.getvalue()


def save_dataset(dataset: ReleaseDataset, path: str | os.PathLike) -> None:
    """Write the dataset atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(render_dataset(dataset.records))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def append_release(
    dataset: ReleaseDataset, record: ReleaseRecord, path: str | os.PathLike
) -> ReleaseDataset:
    """Append ``record`` and persist. On ordering violations nothing is written."""
    updated = dataset.appended(record)
    save_dataset(updated, path)
    return updated
