"""Append-only, checksummed record log.

On-disk framing, one record after another::

    REC <sequence> <record_type> <payload_bytes> <crc32_hex>\\n
    <payload (canonical text, utf-8)>\\n

Reading stops at the first record that is short, malformed, out of
sequence or fails its checksum; everything before it is the durable
prefix.
"""

from __future__ import annotations

import enum
import os
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

__all__ = ["RecordType", "LogRecord", "ReadResult", "EventLog", "read_log"]


class RecordType(str, enum.Enum):
    AGENT_UPSERT = "agent_upsert"
    CHUNK_CREATE = "chunk_create"
    CHUNK_TRANSITION = "chunk_transition"
    SUBSCRIPTION_CREATE = "subscription_create"
    SUBSCRIPTION_DEACTIVATE = "subscription_deactivate"
    NOTIFICATION_EMIT = "notification_emit"
    DELIVERY_UPDATE = "delivery_update"


@dataclass(frozen=True)
class LogRecord:
    sequence: int
    record_type: RecordType
    payload: str
    checksum: str

    @staticmethod
    def checksum_of(payload: bytes) -> str:
        return f"{zlib.crc32(payload) & 0xFFFFFFFF:08x}"

    def encode(self) -> bytes:
        body = self.payload.encode("utf-8")
        header = f"REC {self.sequence} {self.record_type.value} {len(body)} {self.checksum}\n"
        return header.encode("ascii") + body + b"\n"


@dataclass(frozen=True)
class ReadResult:
    records: list[LogRecord]
    valid_bytes: int
    truncated: bool
    reason: Optional[str] = None


def _parse(data: bytes) -> ReadResult:
    records: list[LogRecord] = []
    off = 0
    expected = 1

    def stop(reason: str) -> ReadResult:
        return ReadResult(records, off, True, f"{reason} at byte {off} (record {expected})")

    while off < len(data):
        nl = data.find(b"\n", off)
        if nl < 0:
            return stop("incomplete header")
        try:
            tag, seq, rtype, size, crc = data[off:nl].decode("ascii").split(" ")
            seq, size = int(seq), int(size)
            rtype = RecordType(rtype)
        except (ValueError, UnicodeDecodeError):
            return stop("malformed header")
        if tag != "REC":
            return stop("malformed header")
        if seq != expected:
            return stop(f"sequence gap (found {seq})")
        start, end = nl + 1, nl + 1 + size
        if end + 1 > len(data) or data[end:end + 1] != b"\n":
            return stop("incomplete payload")
        body = data[start:end]
        if LogRecord.checksum_of(body) != crc:
            return stop("checksum mismatch")
        records.append(LogRecord(seq, rtype, body.decode("utf-8"), crc))
        off = end + 1
        expected += 1
    return ReadResult(records, off, False)


def read_log(path: str | Path) -> ReadResult:
    p = Path(path)
    if not p.exists():
        return ReadResult([], 0, False)
    return _parse(p.read_bytes())


class EventLog:
    """Durable append log. Opening an existing file truncates any invalid tail."""

    def __init__(self, path: str | Path, *, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        result = read_log(self.path)
        self.recovered = result
        if result.truncated:
            with open(self.path, "r+b") as fh:
                fh.truncate(result.valid_bytes)
        self._next = len(result.records) + 1
        self._fh = open(self.path, "ab")

    @property
    def next_sequence(self) -> int:
        return self._next

    def append(self, record_type: RecordType | str, payload: str) -> LogRecord:
        record_type = RecordType(record_type)
        body = payload.encode("utf-8")
        with self._lock:
            rec = LogRecord(self._next, record_type, payload, LogRecord.checksum_of(body))
            self._fh.write(rec.encode())
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
            self._next += 1
            return rec

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
