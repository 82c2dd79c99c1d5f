"""Service facade: authentication, authorization, durable logging and recovery."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import secrets
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .. import codec
from ..engine import Engine, EngineConfig
from ..errors import AuthorizationError, NotFound, StateError, ValidationError
from ..index import HnswParams, save_snapshot
from ..lifecycle import ChunkEvent, EventType
from ..matching import DeliveryState, Notification
from ..model import AgentProfile, Chunk, ChunkStatus, NotificationMethod, Subscription
from .log import EventLog, LogRecord, RecordType, read_log

__all__ = ["ADMIN", "ServiceConfig", "load_config", "Service", "RecoveryReport", "recover"]

log = logging.getLogger(__name__)

ADMIN = "__admin__"
ENV_PREFIX = "GOVSUB_"


@dataclass(frozen=True)
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    home_jurisdiction: str = "EU"
    embedding_dim: int = 64
    hnsw_m: int = 16
    hnsw_ef_construction: int = 200
    hnsw_ef_search: int = 100
    log_path: Optional[str] = None
    snapshot_path: Optional[str] = None
    snapshot_every: int = 0
    admin_token: Optional[str] = None
    curators: tuple[str, ...] = ()

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            embedding_dim=self.embedding_dim,
            home_jurisdiction=self.home_jurisdiction,
            hnsw=HnswParams(self.hnsw_m, self.hnsw_ef_construction, self.hnsw_ef_search),
        )


def _coerce(name: str, raw: Any, default: Any) -> Any:
    if name == "curators":
        if isinstance(raw, str):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return tuple(raw)
    if isinstance(default, bool):
        return raw if isinstance(raw, bool) else str(raw).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    return None if raw in (None, "") else str(raw)


def load_config(path: str | Path | None = None, environ: Optional[dict] = None) -> ServiceConfig:
    """Read a JSON config file (optional), then apply ``GOVSUB_<FIELD>`` environment overrides."""
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}
    if path is not None:
        values.update(json.loads(Path(path).read_text()))
    defaults = ServiceConfig()
    known = {f.name for f in fields(ServiceConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        env = environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = env
    return ServiceConfig(**{k: _coerce(k, v, getattr(defaults, k)) for k, v in values.items()})


@codec.register
@dataclass(frozen=True)
class AgentCredential:
    agent_id: str
    token_sha256: str


def _hash_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


@dataclass
class RecoveryReport:
    records_applied: int = 0
    truncated: bool = False
    reason: Optional[str] = None
    rederived: int = 0
    redelivered: int = 0
    mismatches: list[str] = field(default_factory=list)


class Service:
    """Authenticated wrapper around :class:`~govsub.engine.Engine`.

    Every mutation is serialized through one lock and journaled to the
    append log (when configured) before its effects reach matching.
    Principals are agent ids; ``ADMIN`` is the operator.
    """

    def __init__(
        self,
        config: ServiceConfig | None = None,
        *,
        event_log: Optional[EventLog] = None,
        clock=time.time,
        transport=None,
        resolver=None,
        sleep=time.sleep,
    ):
        self.config = config or ServiceConfig()
        self.log = event_log
        self._lock = threading.RLock()
        self._replaying = False
        self._token_owner: dict[str, str] = {}
        self._agent_token: dict[str, str] = {}
        self._writes = 0
        self.engine = Engine(
            self.config.engine_config(),
            clock=clock,
            journal=self._journal,
            authorize_transition=self._authorize_transition,
            transport=transport,
            resolver=resolver,
            sleep=sleep,
        )

    # -- plumbing -------------------------------------------------------------

    def _journal(self, record_type: str, payload: str) -> None:
        if self.log is not None and not self._replaying:
            self.log.append(record_type, payload)

    def _authorize_transition(self, caller, chunk, new_status) -> None:
        if self._replaying or caller == ADMIN or caller in self.config.curators:
            return
        raise AuthorizationError("caller may not change chunk status")

    def _after_write(self) -> None:
        self._writes += 1
        if self.config.snapshot_path and self.config.snapshot_every and self._writes % self.config.snapshot_every == 0:
            self.write_snapshot()

    def write_snapshot(self) -> None:
        if self.config.snapshot_path:
            save_snapshot(self.engine.index, self.config.snapshot_path)

    def authenticate(self, token: Optional[str]) -> str:
        if not token:
            raise AuthorizationError("missing bearer token")
        if self.config.admin_token and secrets.compare_digest(token, self.config.admin_token):
            return ADMIN
        owner = self._token_owner.get(_hash_token(token))
        if owner is None:
            raise AuthorizationError("invalid bearer token")
        return owner

    def _require_agent(self, caller: str) -> str:
        if caller == ADMIN or caller not in self.engine.agents:
            raise AuthorizationError("operation requires an agent principal")
        return caller

    # -- operations -----------------------------------------------------------

    def register_agent(self, profile: AgentProfile, *, caller: str = ADMIN) -> tuple[str, str]:
        """Create or update an agent. Returns ``(agent_id, new_bearer_token)``."""
        if caller != ADMIN:
            raise AuthorizationError("only the operator registers agents")
        token = secrets.token_urlsafe(24)
        digest = _hash_token(token)
        with self._lock:
            if self.log is not None:
                self.log.append(RecordType.AGENT_UPSERT, codec.dumps_many([profile, AgentCredential(profile.agent_id, digest)]))
            self.engine.journal = None
            try:
                self.engine.register_agent(profile)
            finally:
                self.engine.journal = self._journal
            self._set_token(profile.agent_id, digest)
            self._after_write()
        return profile.agent_id, token

    def _set_token(self, agent_id: str, digest: str) -> None:
        old = self._agent_token.pop(agent_id, None)
        if old is not None:
            self._token_owner.pop(old, None)
        self._agent_token[agent_id] = digest
        self._token_owner[digest] = agent_id

    def create_subscription(self, caller: str, query_embedding, threshold: float = 0.7, trigger_status="active",
                            method="polling_queue", *, webhook_url=None, requested_max_sensitivity=None) -> Subscription:
        agent_id = self._require_agent(caller)
        with self._lock:
            sub = self.engine.create_subscription(
                agent_id,
                query_embedding,
                threshold,
                trigger_status,
                method,
                webhook_url=webhook_url,
                requested_max_sensitivity=requested_max_sensitivity,
            )
            self._after_write()
            return sub

    def deactivate_subscription(self, caller: str, subscription_id: str) -> Subscription:
        with self._lock:
            sub = self.engine.deactivate_subscription(subscription_id, caller=None if caller == ADMIN else caller)
            self._after_write()
            return sub

    def submit_chunk(self, caller: str, content: str, embedding, raw_policy=None, *, chunk_id=None):
        contributor = self._require_agent(caller)
        with self._lock:
            chunk, notes = self.engine.submit_chunk(content, embedding, raw_policy, contributor, chunk_id=chunk_id)
            self._after_write()
            return chunk, notes

    def transition_chunk(self, caller: str, chunk_id: str, new_status) -> tuple[ChunkEvent, list[Notification]]:
        with self._lock:
            if chunk_id not in self.engine.chunks:
                raise NotFound("chunk not found")
            out = self.engine.transition_chunk(chunk_id, new_status, caller=caller)
            self._after_write()
            return out

    def get_chunk(self, caller: str, chunk_id: str) -> Chunk:
        return self.engine.get_chunk(chunk_id, self._require_agent(caller))

    def poll(self, caller: str, since_sequence: int = 0, limit: int = 100, include_acked: bool = False):
        return self.engine.poll(self._require_agent(caller), since_sequence, limit, include_acked=include_acked)

    def ack(self, caller: str, notification_ids) -> int:
        agent_id = self._require_agent(caller)
        with self._lock:
            return self.engine.ack(agent_id, notification_ids)

    # -- replay ---------------------------------------------------------------

    def _apply(self, rec: LogRecord, report: RecoveryReport) -> None:
        objs = codec.loads_many(rec.payload)
        eng = self.engine
        rt = rec.record_type
        if rt is RecordType.AGENT_UPSERT:
            profile, cred = objs
            eng.register_agent(profile)
            self._set_token(cred.agent_id, cred.token_sha256)
        elif rt is RecordType.CHUNK_CREATE:
            chunk, event = objs
            _, notes = eng.submit_chunk(
                chunk.content, chunk.embedding, chunk.policy, chunk.contributor_id,
                chunk_id=chunk.chunk_id, timestamp=event.timestamp,
            )
            report.rederived += len(notes)
            self._check_sequence(event, report)
        elif rt is RecordType.CHUNK_TRANSITION:
            (event,) = objs
            status = ChunkStatus.ACTIVE if event.event_type is EventType.ACTIVATED else ChunkStatus.SUPERSEDED
            _, notes = eng.transition_chunk(event.chunk_id, status, timestamp=event.timestamp)
            report.rederived += len(notes)
            self._check_sequence(event, report)
        elif rt is RecordType.SUBSCRIPTION_CREATE:
            (sub,) = objs
            eng.create_subscription(
                sub.agent_id, sub.query_embedding, sub.similarity_threshold, sub.trigger_status,
                sub.notification_method, webhook_url=sub.webhook_url, webhook_secret=sub.webhook_secret,
                requested_max_sensitivity=sub.requested_max_sensitivity, subscription_id=sub.subscription_id,
            )
        elif rt is RecordType.SUBSCRIPTION_DEACTIVATE:
            (sub,) = objs
            eng.deactivate_subscription(sub.subscription_id)
        elif rt is RecordType.NOTIFICATION_EMIT:
            (n,) = objs
            known = eng.pipeline.emitted.get(n.key)
            if known is None:
                eng.pipeline.restore(n)
                eng.dispatcher.restore(n, queued=False)
            elif known.notification_id != n.notification_id:
                report.mismatches.append(f"{n.key}: logged {n.notification_id}, rederived {known.notification_id}")
        elif rt is RecordType.DELIVERY_UPDATE:
            (n,) = objs
            sub = eng.subscriptions.get(n.subscription_id)
            queued = (
                sub is not None
                and sub.notification_method is NotificationMethod.POLLING_QUEUE
                and n.delivery_state in (DeliveryState.DELIVERED, DeliveryState.ACKED)
            )
            eng.dispatcher.restore(n, queued=queued)

    def _check_sequence(self, event: ChunkEvent, report: RecoveryReport) -> None:
        if self.engine.chunks.last_sequence != event.sequence_number:
            report.mismatches.append(
                f"event {event.chunk_id}/{event.event_type.value}: logged seq {event.sequence_number}, "
                f"replayed {self.engine.chunks.last_sequence}"
            )

    def replay(self, records, *, redeliver: bool = True) -> RecoveryReport:
        """Apply log records to this (fresh) service without re-journaling them."""
        report = RecoveryReport()
        with self._lock:
            self._replaying = True
            self.engine.dispatch_enabled = False
            self.engine.replaying = True
            try:
                for rec in records:
                    self._apply(rec, report)
                    report.records_applied += 1
            finally:
                self._replaying = False
                self.engine.dispatch_enabled = True
                self.engine.replaying = False
            if redeliver:
                report.redelivered = self.engine.redeliver_pending()
        return report


def recover(
    config: ServiceConfig,
    log_path: str | Path | None = None,
    *,
    redeliver: bool = True,
    **service_kwargs,
) -> tuple[Service, RecoveryReport]:
    """Rebuild a service from its log and reopen the log for appends.

    Replay stops at the first corrupt record; the invalid tail is cut off
    when the log is reopened.
    """
    path = Path(log_path or config.log_path)
    result = read_log(path)
    svc = Service(config, **service_kwargs)
    report = svc.replay(result.records, redeliver=False)
    report.truncated, report.reason = result.truncated, result.reason
    if result.truncated:
        log.warning("log truncated during recovery: %s", result.reason)
    svc.log = EventLog(path)
    if redeliver:
        with svc._lock:
            report.redelivered = svc.engine.redeliver_pending()
    return svc, report
