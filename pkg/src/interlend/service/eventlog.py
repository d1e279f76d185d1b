"""Append-only persistence: length-prefixed, checksum-chained JSON records.

Each record carries a strictly increasing sequence number and a checksum
chained over the previous record, so truncation, reordering and
corruption all surface as ChecksumMismatch on replay. State rebuild is
event application, never command re-execution.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from ..errors import ChecksumMismatch

GENESIS = "0" * 16


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def _chain(previous: str, body: str) -> str:
    return hashlib.sha256((previous + body).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class LogRecord:
    seq: int
    entity: str
    entity_id: str
    event: dict
    checksum: str

    def body(self) -> str:
        return canonical_json({"seq": self.seq, "entity": self.entity,
                               "id": self.entity_id, "event": self.event})


class EventLog:
    """Single-appender log, optionally file-backed."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[LogRecord] = []
        self._tip = GENESIS
        self._handle = None
        if self.path is not None:
            if self.path.exists():
                self.records = read_log(self.path)
                if self.records:
                    self._tip = self.records[-1].checksum
            self._handle = open(self.path, "a", encoding="utf-8")

    @property
    def next_seq(self) -> int:
        return len(self.records) + 1

    def append(self, entity: str, entity_id: str, event: dict) -> LogRecord:
        body = canonical_json({"seq": self.next_seq, "entity": entity,
                               "id": entity_id, "event": event})
        checksum = _chain(self._tip, body)
        record = LogRecord(self.next_seq, entity, entity_id, event, checksum)
        self.records.append(record)
        self._tip = checksum
        if self._handle is not None:
            line = canonical_json({"seq": record.seq, "entity": entity,
                                   "id": entity_id, "event": event,
                                   "check": checksum})
            encoded = line.encode("utf-8")
            self._handle.write(f"{len(encoded)}:{line}\n")
            self._handle.flush()
            os.fsync(self._handle.fileno())
        return record

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


def read_log(path: str | Path) -> list[LogRecord]:
    """Read and verify a log file; any damage raises ChecksumMismatch."""
    records: list[LogRecord] = []
    tip = GENESIS
    raw = Path(path).read_bytes()
    offset = 0
    size = len(raw)
    while offset < size:
        colon = raw.find(b":", offset)
        if colon < 0:
            raise ChecksumMismatch(f"malformed length prefix at byte {offset}")
        try:
            length = int(raw[offset:colon])
        except ValueError as exc:
            raise ChecksumMismatch(f"bad length prefix at byte {offset}") from exc
        start = colon + 1
        end = start + length
        if end + 1 > size:  # +1 for the trailing newline
            raise ChecksumMismatch("truncated record at end of log")
        line = raw[start:end]
        if raw[end:end + 1] != b"\n":
            raise ChecksumMismatch("missing record terminator")
        try:
            data = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ChecksumMismatch(f"corrupt record payload: {exc}") from exc
        expected_seq = len(records) + 1
        if data.get("seq") != expected_seq:
            raise ChecksumMismatch(
                f"sequence gap: expected {expected_seq}, got {data.get('seq')}")
        record = LogRecord(data["seq"], data["entity"], data["id"],
                           data["event"], data["check"])
        if _chain(tip, record.body()) != record.checksum:
            raise ChecksumMismatch(f"checksum mismatch at seq {record.seq}")
        records.append(record)
        tip = record.checksum
        offset = end + 1
    return records


def state_digest(snapshot: dict) -> str:
    """Stable digest of a full state snapshot."""
    return hashlib.sha256(canonical_json(snapshot).encode("utf-8")).hexdigest()
