"""Chunk status state machine and lifecycle events.

Legal transitions::

    proposed -> active       emits ``activated`` (content subscriptions)
    proposed -> superseded   emits ``superseded`` (review rejection)
    active   -> superseded   emits ``superseded``

Creation emits ``created`` (review subscriptions). ``superseded`` is
terminal and never triggers matching.
"""

from __future__ import annotations

import enum
import itertools
import threading
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, replace
from typing import Any, Optional

from . import codec
from .errors import NotFound, StateError, ValidationError
from .model import Chunk, ChunkStatus, normalize_policy
from .vectors import as_embedding

__all__ = ["EventType", "ChunkEvent", "ChunkStore", "TRANSITIONS"]


class EventType(str, enum.Enum):
    CREATED = "created"
    ACTIVATED = "activated"
    SUPERSEDED = "superseded"


@codec.register
@dataclass(frozen=True)
class ChunkEvent:
    event_type: EventType
    chunk_id: str
    timestamp: float
    sequence_number: int


TRANSITIONS: dict[tuple[ChunkStatus, ChunkStatus], EventType] = {
    (ChunkStatus.PROPOSED, ChunkStatus.ACTIVE): EventType.ACTIVATED,
    (ChunkStatus.PROPOSED, ChunkStatus.SUPERSEDED): EventType.SUPERSEDED,
    (ChunkStatus.ACTIVE, ChunkStatus.SUPERSEDED): EventType.SUPERSEDED,
}

# (caller, chunk, new_status) -> None; raises AuthorizationError to refuse
TransitionHook = Callable[[Optional[str], Chunk, ChunkStatus], None]


def _allow_all(caller: Optional[str], chunk: Chunk, new_status: ChunkStatus) -> None:
    return None


class ChunkStore:
    """In-memory chunk table plus the event sequence counter.

    ``clock`` supplies event timestamps; inject a deterministic one for
    reproducible runs.
    """

    def __init__(
        self,
        dim: int | None = None,
        *,
        home_jurisdiction: str = "EU",
        clock: Callable[[], float] = time.time,
        authorize_transition: TransitionHook = _allow_all,
    ):
        self.dim = dim
        self.home_jurisdiction = home_jurisdiction
        self.clock = clock
        self.authorize_transition = authorize_transition
        self._chunks: dict[str, Chunk] = {}
        self._seq = itertools.count(1)
        self._last_seq = 0
        self._ids = itertools.count(1)
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._chunks)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._chunks

    def __iter__(self):
        return iter(list(self._chunks.values()))

    @property
    def last_sequence(self) -> int:
        return self._last_seq

    def get(self, chunk_id: str) -> Chunk:
        try:
            return self._chunks[chunk_id]
        except KeyError:
            raise NotFound(f"chunk {chunk_id!r} not found") from None

    def _event(self, event_type: EventType, chunk_id: str, timestamp: float) -> ChunkEvent:
        self._last_seq = next(self._seq)
        return ChunkEvent(event_type, chunk_id, timestamp, self._last_seq)

    def _next_id(self) -> str:
        while True:
            cid = f"chunk-{next(self._ids):06d}"
            if cid not in self._chunks:
                return cid

    def create_chunk(
        self,
        content: str,
        embedding,
        raw_policy: Mapping[str, Any] | None,
        contributor_id: str,
        *,
        chunk_id: str | None = None,
        contributor_jurisdiction: str | None = None,
        timestamp: float | None = None,
    ) -> tuple[Chunk, ChunkEvent]:
        vec = as_embedding(embedding, self.dim)
        policy = normalize_policy(
            raw_policy, home_jurisdiction=self.home_jurisdiction, contributor_jurisdiction=contributor_jurisdiction
        )
        if not isinstance(contributor_id, str) or not contributor_id:
            raise ValidationError("contributor_id must be a non-empty string")
        with self._lock:
            if chunk_id is None:
                chunk_id = self._next_id()
            elif chunk_id in self._chunks:
                raise StateError(f"chunk {chunk_id!r} already exists")
            ts = self.clock() if timestamp is None else timestamp
            chunk = Chunk(
                chunk_id=chunk_id,
                embedding=vec,
                status=ChunkStatus.PROPOSED,
                policy=policy,
                contributor_id=contributor_id,
                created_at=ts,
                content=content,
            )
            self._chunks[chunk_id] = chunk
            return chunk, self._event(EventType.CREATED, chunk_id, ts)

    def transition(
        self, chunk_id: str, new_status: ChunkStatus | str, *, caller: str | None = None, timestamp: float | None = None
    ) -> ChunkEvent:
        try:
            new_status = ChunkStatus(new_status)
        except ValueError:
            raise ValidationError(f"unknown status {new_status!r}") from None
        with self._lock:
            chunk = self.get(chunk_id)
            self.authorize_transition(caller, chunk, new_status)
            event_type = TRANSITIONS.get((chunk.status, new_status))
            if event_type is None:
                raise StateError(f"illegal transition {chunk.status.value} -> {new_status.value} for {chunk_id!r}")
            ts = self.clock() if timestamp is None else timestamp
            activated_at = ts if new_status is ChunkStatus.ACTIVE else chunk.activated_at
            updated = replace(chunk, status=new_status, activated_at=activated_at)
            self._chunks[chunk_id] = updated
            return self._event(event_type, chunk_id, ts)
