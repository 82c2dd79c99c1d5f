"""Event-driven matching: index query, policy filter and curation routing.

A ``created`` event is matched against review subscriptions
(``trigger_status`` proposed or both); an ``activated`` event against
content subscriptions (active or both). Candidates come from the index,
the owning agent's profile is resolved at match time, and each
(chunk, subscription, trigger) yields at most one notification.

:func:`oracle_notifications` recomputes the expected set with a nested
loop and no index; :func:`compute_metrics` compares the two.
"""

from __future__ import annotations

import enum
import itertools
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace
from typing import Union

from . import codec
from .index import ExactIndex, HnswIndex, MatchCandidate
from .lifecycle import ChunkEvent, EventType
from .model import (
    DIMENSIONS,
    AgentProfile,
    Chunk,
    ChunkStatus,
    Subscription,
    TriggerStatus,
    check_dimensions,
    curation_matches,
    evaluate_dimension_subset,
    notify_predicate,
    policy_passes,
)
from .vectors import cosine_similarity, meets_threshold

__all__ = [
    "Trigger",
    "DeliveryState",
    "Notification",
    "MatchingPipeline",
    "NotificationKey",
    "oracle_notifications",
    "MetricsReport",
    "compute_metrics",
]

log = logging.getLogger(__name__)

NotificationKey = tuple[str, str, str]


class Trigger(str, enum.Enum):
    PROPOSED = "proposed"
    ACTIVE = "active"


class DeliveryState(str, enum.Enum):
    PENDING = "pending"
    DELIVERED = "delivered"
    FAILED = "failed"
    ACKED = "acked"


@codec.register
@dataclass(frozen=True)
class Notification:
    notification_id: str
    sequence: int
    chunk_id: str
    subscription_id: str
    agent_id: str
    similarity: float
    trigger: Trigger
    created_at: float
    delivery_state: DeliveryState = DeliveryState.PENDING

    @property
    def key(self) -> NotificationKey:
        return (self.chunk_id, self.subscription_id, self.trigger.value)


_EVENT_TRIGGER = {EventType.CREATED: Trigger.PROPOSED, EventType.ACTIVATED: Trigger.ACTIVE}
_LISTENERS = {
    Trigger.PROPOSED: frozenset({TriggerStatus.PROPOSED, TriggerStatus.BOTH}),
    Trigger.ACTIVE: frozenset({TriggerStatus.ACTIVE, TriggerStatus.BOTH}),
}


class MatchingPipeline:
    """Single logical consumer of chunk events.

    ``enabled_dims`` restricts the policy filter (all five by default);
    ``governed=False`` skips it entirely. With ``verify=True`` every
    emission is re-checked against :func:`notify_predicate` using a
    freshly computed similarity and an AssertionError is raised on any
    disagreement.
    """

    def __init__(
        self,
        index: Union[HnswIndex, ExactIndex],
        subscriptions: Mapping[str, Subscription],
        agents: Mapping[str, AgentProfile],
        *,
        governed: bool = True,
        enabled_dims: Iterable[str] = DIMENSIONS,
        verify: bool = False,
    ):
        self.index = index
        self.subscriptions = subscriptions
        self.agents = agents
        self.governed = governed
        self.enabled_dims = check_dimensions(enabled_dims)
        self._fast_dims = None if self.enabled_dims == frozenset(DIMENSIONS) else self.enabled_dims
        self.verify = verify
        self.emitted: dict[NotificationKey, Notification] = {}
        self.integrity_warnings: list[str] = []
        self._seq = itertools.count(1)
        self.last_sequence = 0

    def candidates(
        self, chunk: Chunk, trigger: Trigger
    ) -> list[tuple[Subscription, AgentProfile, MatchCandidate]]:
        """Index hits for ``chunk`` that listen to ``trigger`` and pass the policy filter."""
        listeners = _LISTENERS[trigger]
        out = []
        for cand in self.index.match(chunk.embedding):
            sub = self.subscriptions.get(cand.subscription_id)
            if sub is None or not sub.active or sub.trigger_status not in listeners:
                continue
            agent = self.agents.get(sub.agent_id)
            if agent is None:
                msg = f"subscription {sub.subscription_id} references unknown agent {sub.agent_id}"
                self.integrity_warnings.append(msg)
                log.warning(msg)
                continue
            if self.governed and not policy_passes(agent, chunk.policy, self._fast_dims):
                continue
            out.append((sub, agent, cand))
        return out

    def process_event(self, event: ChunkEvent, chunk: Chunk) -> list[Notification]:
        trigger = _EVENT_TRIGGER.get(event.event_type)
        if trigger is None:
            return []
        if chunk.chunk_id != event.chunk_id:
            raise ValueError("event and chunk do not match")
        # route on the status the event implies, not whatever the chunk is now
        at_event = chunk if chunk.status.value == trigger.value else _with_status(chunk, trigger, event.timestamp)
        fresh = []
        for sub, agent, cand in self.candidates(at_event, trigger):
            key = (chunk.chunk_id, sub.subscription_id, trigger.value)
            if key in self.emitted:
                continue
            if self.verify:
                self._verify(sub, agent, at_event, cand)
            self.last_sequence = next(self._seq)
            n = Notification(
                notification_id=f"n-{self.last_sequence:08d}",
                sequence=self.last_sequence,
                chunk_id=chunk.chunk_id,
                subscription_id=sub.subscription_id,
                agent_id=agent.agent_id,
                similarity=cand.similarity,
                trigger=trigger,
                created_at=event.timestamp,
            )
            self.emitted[key] = n
            fresh.append(n)
        return fresh

    def restore(self, notification: Notification) -> bool:
        """Re-register a previously emitted notification (log replay). False if already known."""
        if notification.key in self.emitted:
            return False
        self.emitted[notification.key] = notification
        if notification.sequence > self.last_sequence:
            self._seq = itertools.count(notification.sequence + 1)
            self.last_sequence = notification.sequence
        return True

    def _verify(self, sub: Subscription, agent: AgentProfile, chunk: Chunk, cand: MatchCandidate) -> None:
        sim = cosine_similarity(chunk.embedding, sub.query_embedding)
        assert abs(sim - cand.similarity) <= 1e-6, (sub.subscription_id, sim, cand.similarity)
        if self.governed and self.enabled_dims == frozenset(DIMENSIONS):
            assert notify_predicate(sub, agent, chunk, sim), (sub.subscription_id, chunk.chunk_id)
        else:
            decision = evaluate_dimension_subset(agent, chunk.policy, self.enabled_dims if self.governed else ())
            assert meets_threshold(sim, sub.similarity_threshold) and decision.overall
            assert curation_matches(chunk.status, sub.trigger_status)


def _with_status(chunk: Chunk, trigger: Trigger, ts: float) -> Chunk:
    if trigger is Trigger.PROPOSED:
        return replace(chunk, status=ChunkStatus.PROPOSED, activated_at=None)
    return replace(chunk, status=ChunkStatus.ACTIVE, activated_at=chunk.activated_at or ts)


def oracle_notifications(
    chunks: Iterable[Chunk],
    subscriptions: Iterable[Subscription],
    agents: Mapping[str, AgentProfile],
    mode: str = "governed",
    enabled_dims: Iterable[str] = DIMENSIONS,
) -> set[NotificationKey]:
    """Expected notification keys by exhaustive evaluation.

    Assumes every subscription and agent profile existed, unchanged,
    before the first chunk event. A chunk fired the ``proposed`` trigger
    when it was created and the ``active`` trigger iff it was ever
    activated (``activated_at`` is set).
    """
    if mode not in ("governed", "ungoverned"):
        raise ValueError(f"unknown mode {mode!r}")
    enabled = check_dimensions(enabled_dims)
    subs = [s for s in subscriptions if s.active]
    expected: set[NotificationKey] = set()
    for chunk in chunks:
        fired = [ChunkStatus.PROPOSED]
        if chunk.activated_at is not None:
            fired.append(ChunkStatus.ACTIVE)
        for sub in subs:
            sim = cosine_similarity(chunk.embedding, sub.query_embedding)
            if not meets_threshold(sim, sub.similarity_threshold):
                continue
            for status in fired:
                if not curation_matches(status, sub.trigger_status):
                    continue
                if mode == "governed":
                    agent = agents.get(sub.agent_id)
                    if agent is None or not evaluate_dimension_subset(agent, chunk.policy, enabled).overall:
                        continue
                expected.add((chunk.chunk_id, sub.subscription_id, status.value))
    return expected


@codec.register
@dataclass(frozen=True)
class MetricsReport:
    notifications: int
    violations: int
    spurious: int
    compliance_rate: float
    true_positives: int
    authorized_total: int
    recall: float

    CSV_HEADER = "notifications,violations,spurious,compliance_rate,true_positives,authorized_total,recall"

    def to_csv_row(self) -> str:
        return (
            f"{self.notifications},{self.violations},{self.spurious},{self.compliance_rate:.6f},"
            f"{self.true_positives},{self.authorized_total},{self.recall:.6f}"
        )


def _keys(items: Iterable[Union[Notification, NotificationKey]]) -> list[NotificationKey]:
    return [n.key if isinstance(n, Notification) else tuple(n) for n in items]


def compute_metrics(
    actual: Iterable[Union[Notification, NotificationKey]],
    oracle_governed: set[NotificationKey],
    oracle_ungoverned: set[NotificationKey],
) -> MetricsReport:
    """Violations, compliance and authorized-content recall of ``actual``.

    A violation is an emitted key that is semantically valid (in the
    ungoverned oracle) but fails the policy (absent from the governed
    one). Keys outside the ungoverned oracle are counted as spurious.
    """
    keys = _keys(actual)
    forbidden = oracle_ungoverned - oracle_governed
    violations = sum(1 for k in keys if k in forbidden)
    spurious = sum(1 for k in keys if k not in oracle_ungoverned)
    total = len(keys)
    tp = len(set(keys) & oracle_governed)
    return MetricsReport(
        notifications=total,
        violations=violations,
        spurious=spurious,
        compliance_rate=1.0 - violations / total if total else 1.0,
        true_positives=tp,
        authorized_total=len(oracle_governed),
        recall=tp / len(oracle_governed) if oracle_governed else 1.0,
    )
