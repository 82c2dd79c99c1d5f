"""The embeddable engine: registries, lifecycle, index, matching and dispatch wired together."""

from __future__ import annotations

import hashlib
import itertools
import secrets
import time
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from . import codec
from .dispatch import Dispatcher, RetryPolicy, validate_webhook_url
from .errors import AccessDenied, AuthorizationError, NotFound, StateError, ValidationError
from .index import ExactIndex, HnswIndex, HnswParams
from .lifecycle import ChunkEvent, ChunkStore, EventType
from .matching import DeliveryState, MatchingPipeline, Notification, Trigger
from .model import (
    DIMENSIONS,
    AgentProfile,
    Chunk,
    ChunkStatus,
    NotificationMethod,
    Subscription,
    TriggerStatus,
    check_level,
    curation_matches,
    evaluate_dimension_subset,
    evaluate_policy,
    notify_predicate,
)
from .vectors import as_embedding, cosine_similarity, meets_threshold

__all__ = ["EngineConfig", "Engine"]

# journal(record_type, payload_text); the service points this at its log
Journal = Callable[[str, str], None]


@dataclass(frozen=True)
class EngineConfig:
    embedding_dim: int = 64
    home_jurisdiction: str = "EU"
    hnsw: HnswParams = field(default_factory=HnswParams)
    index_kind: str = "hnsw"
    governed: bool = True
    enabled_dims: tuple[str, ...] = DIMENSIONS
    verify: bool = False

    def make_index(self):
        if self.index_kind == "hnsw":
            return HnswIndex(self.embedding_dim, self.hnsw)
        if self.index_kind == "exact":
            return ExactIndex(self.embedding_dim)
        raise ValidationError(f"unknown index kind {self.index_kind!r}")


class Engine:
    """In-process governance-aware pub/sub engine.

    All mutations go through the methods here. ``journal`` (optional) is
    called with a record type and canonical payload *before* the
    mutation's effects are handed to matching or dispatch, so a write-ahead
    log can be layered on top.
    """

    def __init__(
        self,
        config: EngineConfig | None = None,
        *,
        clock: Callable[[], float] = time.time,
        journal: Optional[Journal] = None,
        authorize_transition=None,
        transport=None,
        resolver=None,
        sleep: Callable[[float], None] = time.sleep,
        retry: RetryPolicy = RetryPolicy(),
    ):
        self.config = config or EngineConfig()
        self.clock = clock
        self.journal = journal
        self.agents: dict[str, AgentProfile] = {}
        self.subscriptions: dict[str, Subscription] = {}
        store_kwargs: dict[str, Any] = {}
        if authorize_transition is not None:
            store_kwargs["authorize_transition"] = authorize_transition
        self.chunks = ChunkStore(
            self.config.embedding_dim, home_jurisdiction=self.config.home_jurisdiction, clock=clock, **store_kwargs
        )
        self.index = self.config.make_index()
        self.pipeline = MatchingPipeline(
            self.index,
            self.subscriptions,
            self.agents,
            governed=self.config.governed,
            enabled_dims=self.config.enabled_dims,
            verify=self.config.verify,
        )
        dispatch_kwargs: dict[str, Any] = {}
        if transport is not None:
            dispatch_kwargs["transport"] = transport
        if resolver is not None:
            dispatch_kwargs["resolver"] = resolver
        self.dispatcher = Dispatcher(
            self.subscriptions,
            self.agents,
            sleep=sleep,
            clock=clock,
            retry=retry,
            recheck=self.recheck if self.config.governed else None,
            on_update=self._on_delivery_update,
            **dispatch_kwargs,
        )
        self.dispatch_enabled = True
        # set while rebuilding from a log: skips checks that consult the outside world
        self.replaying = False
        self._sub_ids = itertools.count(1)

    # -- journal ------------------------------------------------------------

    def _write(self, record_type: str, *objs: Any) -> None:
        if self.journal is not None:
            self.journal(record_type, codec.dumps_many(objs))

    def _on_delivery_update(self, n: Notification, attempt) -> None:
        self._write("delivery_update", n)

    # -- agents -------------------------------------------------------------

    def register_agent(self, profile: AgentProfile) -> str:
        """Insert or replace an agent profile; affects future matching only."""
        if not isinstance(profile, AgentProfile):
            raise ValidationError("expected an AgentProfile")
        self._write("agent_upsert", profile)
        self.agents[profile.agent_id] = profile
        return profile.agent_id

    def agent(self, agent_id: str) -> AgentProfile:
        try:
            return self.agents[agent_id]
        except KeyError:
            raise NotFound(f"agent {agent_id!r} not found") from None

    # -- subscriptions ------------------------------------------------------

    def _next_sub_id(self) -> str:
        while True:
            sid = f"sub-{next(self._sub_ids):06d}"
            if sid not in self.subscriptions:
                return sid

    def create_subscription(
        self,
        agent_id: str,
        query_embedding,
        threshold: float = 0.7,
        trigger_status: TriggerStatus | str = TriggerStatus.ACTIVE,
        method: NotificationMethod | str = NotificationMethod.POLLING_QUEUE,
        *,
        webhook_url: str | None = None,
        webhook_secret: str | None = None,
        requested_max_sensitivity: int | None = None,
        subscription_id: str | None = None,
    ) -> Subscription:
        agent = self.agent(agent_id)
        if requested_max_sensitivity is not None:
            requested_max_sensitivity = check_level(requested_max_sensitivity, "requested_max_sensitivity")
            if requested_max_sensitivity > agent.handling_level:
                raise AuthorizationError("requested sensitivity exceeds the agent's declared handling level")
        if method == NotificationMethod.WEBHOOK and webhook_secret is None:
            webhook_secret = secrets.token_hex(16)
        if subscription_id is not None and subscription_id in self.subscriptions:
            raise StateError(f"subscription {subscription_id!r} already exists")
        sub = Subscription(
            subscription_id=subscription_id or self._next_sub_id(),
            agent_id=agent_id,
            query_embedding=as_embedding(query_embedding, self.config.embedding_dim),
            similarity_threshold=threshold,
            trigger_status=trigger_status,
            notification_method=method,
            webhook_url=webhook_url,
            webhook_secret=webhook_secret,
            requested_max_sensitivity=requested_max_sensitivity,
        )
        if sub.notification_method is NotificationMethod.WEBHOOK and not self.replaying:
            validate_webhook_url(sub.webhook_url, self.dispatcher.resolver)
        self._write("subscription_create", sub)
        self.subscriptions[sub.subscription_id] = sub
        self.index.insert(sub.subscription_id, sub.query_embedding, sub.similarity_threshold)
        return sub

    def deactivate_subscription(self, subscription_id: str, *, caller: str | None = None) -> Subscription:
        sub = self.subscriptions.get(subscription_id)
        if sub is None or (caller is not None and sub.agent_id != caller):
            raise NotFound(f"subscription {subscription_id!r} not found")
        if not sub.active:
            return sub
        self._write("subscription_deactivate", sub)
        sub = replace(sub, active=False)
        self.subscriptions[subscription_id] = sub
        self.index.remove(subscription_id)
        return sub

    # -- chunks -------------------------------------------------------------

    def submit_chunk(
        self,
        content: str,
        embedding,
        raw_policy: Mapping[str, Any] | None,
        contributor_id: str,
        *,
        chunk_id: str | None = None,
        timestamp: float | None = None,
    ) -> tuple[Chunk, list[Notification]]:
        contributor = self.agents.get(contributor_id)
        chunk, event = self.chunks.create_chunk(
            content,
            embedding,
            raw_policy,
            contributor_id,
            chunk_id=chunk_id,
            contributor_jurisdiction=contributor.jurisdiction if contributor else None,
            timestamp=timestamp,
        )
        self._write("chunk_create", chunk, event)
        return chunk, self.handle(event)

    def transition_chunk(
        self, chunk_id: str, new_status: ChunkStatus | str, *, caller: str | None = None, timestamp: float | None = None
    ) -> tuple[ChunkEvent, list[Notification]]:
        event = self.chunks.transition(chunk_id, new_status, caller=caller, timestamp=timestamp)
        self._write("chunk_transition", event)
        return event, self.handle(event)

    def get_chunk(self, chunk_id: str, agent_id: str) -> Chunk:
        """Read a chunk on behalf of ``agent_id``.

        Unknown chunks and chunks the agent's policy forbids raise the same
        :class:`AccessDenied` with the same message.
        """
        agent = self.agents.get(agent_id)
        chunk = self.chunks._chunks.get(chunk_id)
        if agent is None or chunk is None or not evaluate_policy(agent, chunk.policy).overall:
            raise AccessDenied("chunk not found")
        return chunk

    # -- matching & dispatch ------------------------------------------------

    def handle(self, event: ChunkEvent) -> list[Notification]:
        if event.event_type is EventType.SUPERSEDED:
            return []
        fresh = self.pipeline.process_event(event, self.chunks.get(event.chunk_id))
        for n in fresh:
            self._write("notification_emit", n)
        for n in fresh:
            if self.dispatch_enabled:
                self.dispatcher.deliver(n)
            else:
                self.dispatcher.restore(n, queued=False)
        return fresh

    def recheck(self, n: Notification) -> bool:
        """Recompute the full notification predicate from scratch."""
        sub = self.subscriptions.get(n.subscription_id)
        agent = self.agents.get(n.agent_id)
        chunk = self.chunks._chunks.get(n.chunk_id)
        if sub is None or agent is None or chunk is None or sub.agent_id != agent.agent_id:
            return False
        status = ChunkStatus.PROPOSED if n.trigger is Trigger.PROPOSED else ChunkStatus.ACTIVE
        at_event = chunk if chunk.status is status else replace(
            chunk, status=status, activated_at=chunk.activated_at if status is ChunkStatus.ACTIVE else None
        )
        if status is ChunkStatus.ACTIVE and at_event.activated_at is None:
            return False
        sim = cosine_similarity(chunk.embedding, sub.query_embedding)
        if frozenset(self.config.enabled_dims) == frozenset(DIMENSIONS):
            return notify_predicate(sub, agent, at_event, sim)
        # ablation runs: same predicate restricted to the enabled dimensions
        return (
            meets_threshold(sim, sub.similarity_threshold)
            and evaluate_dimension_subset(agent, chunk.policy, self.config.enabled_dims).overall
            and curation_matches(at_event.status, sub.trigger_status)
        )

    @property
    def notifications(self) -> list[Notification]:
        """Every notification with its current delivery state, in emission order."""
        known = self.dispatcher.notifications
        return sorted(
            (known.get(n.notification_id, n) for n in self.pipeline.emitted.values()), key=lambda n: n.sequence
        )

    def poll(self, agent_id: str, since_sequence: int = 0, limit: int = 100, *, include_acked: bool = False):
        return self.dispatcher.poll_notifications(agent_id, since_sequence, limit, include_acked=include_acked)

    def ack(self, agent_id: str, notification_ids: Iterable[str]) -> int:
        return self.dispatcher.ack(agent_id, notification_ids)

    def redeliver_pending(self) -> int:
        """Deliver notifications left pending (e.g. after a crash). Returns how many were attempted."""
        count = 0
        for n in self.notifications:
            if n.delivery_state is DeliveryState.PENDING:
                self.dispatcher.deliver(n)
                count += 1
        return count

    # -- digests ------------------------------------------------------------

    def state_text(self) -> str:
        parts = [codec.dumps(self.agents[k]) for k in sorted(self.agents)]
        parts += [codec.dumps(c) for c in sorted(self.chunks, key=lambda c: c.chunk_id)]
        parts += [codec.dumps(self.subscriptions[k]) for k in sorted(self.subscriptions)]
        parts += [codec.dumps(n) for n in self.notifications]
        return "\n".join(parts)

    def state_digest(self) -> str:
        return hashlib.sha256(self.state_text().encode("utf-8")).hexdigest()
