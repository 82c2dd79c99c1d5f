"""Notification delivery: per-agent polling queues and guarded webhooks."""

from __future__ import annotations

import bisect
import enum
import hashlib
import hmac
import ipaddress
import logging
import socket
import threading
import time
import urllib.error
import urllib.request
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, replace
from typing import Optional
from urllib.parse import urlsplit

from . import codec
from .errors import AuthorizationError, NotFound, SsrfError, ValidationError
from .matching import DeliveryState, Notification
from .model import NotificationMethod, Subscription

__all__ = [
    "Outcome",
    "DeliveryAttempt",
    "WebhookTarget",
    "RetryPolicy",
    "validate_webhook_url",
    "webhook_body",
    "sign_body",
    "Dispatcher",
    "SIGNATURE_HEADER",
]

log = logging.getLogger(__name__)

SIGNATURE_HEADER = "X-Govsub-Signature"
ALLOWED_SCHEMES = ("http", "https")

# cloud metadata endpoints not already covered by the non-global ranges
_METADATA_ADDRESSES = frozenset(
    ipaddress.ip_address(a) for a in ("169.254.169.254", "169.254.170.2", "100.100.100.200", "fd00:ec2::254")
)


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    RETRYABLE_FAILURE = "retryable_failure"
    PERMANENT_FAILURE = "permanent_failure"


@codec.register
@dataclass(frozen=True)
class DeliveryAttempt:
    notification_id: str
    attempt_number: int
    outcome: Outcome
    timestamp: float
    detail: str = ""


@dataclass(frozen=True)
class WebhookTarget:
    url: str
    host: str
    addresses: tuple[str, ...]
    address_class: str = "public"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0

    def delay(self, attempt_number: int) -> float:
        """Seconds to wait after failed attempt ``attempt_number``."""
        return self.base_delay * self.factor ** (attempt_number - 1)


def _system_resolver(host: str) -> list[str]:
    infos = socket.getaddrinfo(host, None, proto=socket.IPPROTO_TCP)
    return sorted({info[4][0] for info in infos})


def _classify(addr: str) -> Optional[str]:
    """Return why ``addr`` is not publicly routable, or None if it is."""
    ip = ipaddress.ip_address(addr.split("%", 1)[0])
    mapped = getattr(ip, "ipv4_mapped", None)
    if mapped is not None:
        ip = mapped
    if ip in _METADATA_ADDRESSES:
        return "metadata"
    if ip.is_loopback:
        return "loopback"
    if ip.is_link_local:
        return "link-local"
    if ip.is_private:
        return "private"
    if not ip.is_global or ip.is_multicast or ip.is_reserved or ip.is_unspecified:
        return "non-global"
    return None


def validate_webhook_url(url: str, resolver: Callable[[str], list[str]] = _system_resolver) -> WebhookTarget:
    """Accept ``url`` only if every address it resolves to is public.

    Raises ValidationError for a bad scheme or unparseable URL and
    SsrfError when any resolved address is loopback, link-local,
    private, metadata or otherwise non-global.
    """
    try:
        parts = urlsplit(url)
        host = parts.hostname
        parts.port  # noqa: B018 - raises on a malformed port
    except ValueError as exc:
        raise ValidationError(f"unparseable webhook url: {exc}") from None
    if parts.scheme not in ALLOWED_SCHEMES:
        raise ValidationError(f"webhook scheme must be http or https, got {parts.scheme!r}")
    if not host:
        raise ValidationError("webhook url has no host")
    if parts.username or parts.password:
        raise ValidationError("webhook url must not carry credentials")
    try:
        addresses = [str(ipaddress.ip_address(host))]
    except ValueError:
        try:
            addresses = list(resolver(host))
        except OSError as exc:
            raise ValidationError(f"cannot resolve webhook host {host!r}: {exc}") from None
    if not addresses:
        raise ValidationError(f"webhook host {host!r} resolved to nothing")
    for addr in addresses:
        why = _classify(addr)
        if why is not None:
            raise SsrfError(f"webhook host {host!r} resolves to a {why} address")
    return WebhookTarget(url=url, host=host, addresses=tuple(addresses))


def webhook_body(notification: Notification) -> bytes:
    """Canonical payload: identifiers and score only, never chunk content."""
    fields = {
        "notification_id": notification.notification_id,
        "sequence": notification.sequence,
        "chunk_id": notification.chunk_id,
        "subscription_id": notification.subscription_id,
        "agent_id": notification.agent_id,
        "similarity": notification.similarity,
        "trigger": notification.trigger,
        "created_at": notification.created_at,
    }
    return codec.encode_record("WebhookNotification", fields).encode("utf-8")


def sign_body(secret: str, body: bytes) -> str:
    return "sha256=" + hmac.new(secret.encode("utf-8"), body, hashlib.sha256).hexdigest()


class _NoRedirect(urllib.request.HTTPRedirectHandler):
    def redirect_request(self, *args, **kwargs):
        return None


_opener = urllib.request.build_opener(_NoRedirect)


def _urllib_post(url: str, body: bytes, headers: Mapping[str, str], timeout: float) -> int:
    req = urllib.request.Request(url, data=body, headers=dict(headers), method="POST")
    try:
        with _opener.open(req, timeout=timeout) as resp:
            return resp.status
    except urllib.error.HTTPError as exc:
        return exc.code


Transport = Callable[[str, bytes, Mapping[str, str], float], int]


class Dispatcher:
    """Delivers notifications and serves the per-agent polling queues.

    ``transport(url, body, headers, timeout) -> status`` performs the
    HTTP POST; it may raise OSError (including timeouts), which counts as
    a retryable failure. ``recheck(notification) -> bool`` is the last
    policy gate before anything leaves the process.
    """

    def __init__(
        self,
        subscriptions: Mapping[str, Subscription],
        agents: Mapping[str, object],
        *,
        transport: Transport = _urllib_post,
        resolver: Callable[[str], list[str]] = _system_resolver,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.time,
        recheck: Optional[Callable[[Notification], bool]] = None,
        retry: RetryPolicy = RetryPolicy(),
        timeout: float = 5.0,
        on_update: Optional[Callable[[Notification, Optional[DeliveryAttempt]], None]] = None,
    ):
        self.subscriptions = subscriptions
        self.agents = agents
        self.transport = transport
        self.resolver = resolver
        self.sleep = sleep
        self.clock = clock
        self.recheck = recheck
        self.retry = retry
        self.timeout = timeout
        self.on_update = on_update
        self.notifications: dict[str, Notification] = {}
        self.attempts: dict[str, list[DeliveryAttempt]] = {}
        self._queues: dict[str, list[Notification]] = {}
        self._queue_seqs: dict[str, list[int]] = {}
        self._lock = threading.RLock()

    # -- state --------------------------------------------------------------

    def _put(self, n: Notification, *, insert: bool) -> None:
        queue = self._queues.setdefault(n.agent_id, [])
        seqs = self._queue_seqs.setdefault(n.agent_id, [])
        i = bisect.bisect_left(seqs, n.sequence)
        if i < len(seqs) and seqs[i] == n.sequence:
            queue[i] = n
        elif insert:
            seqs.insert(i, n.sequence)
            queue.insert(i, n)

    def _set_state(self, n: Notification, state: DeliveryState, attempt: Optional[DeliveryAttempt] = None) -> Notification:
        n = replace(n, delivery_state=state)
        with self._lock:
            self.notifications[n.notification_id] = n
            self._put(n, insert=False)
        if self.on_update is not None:
            self.on_update(n, attempt)
        return n

    def restore(self, n: Notification, *, queued: bool) -> None:
        """Reinstate a notification and its delivery state during log replay."""
        with self._lock:
            self.notifications[n.notification_id] = n
            if queued:
                self._put(n, insert=True)

    def _record(self, nid: str, number: int, outcome: Outcome, detail: str) -> DeliveryAttempt:
        attempt = DeliveryAttempt(nid, number, outcome, self.clock(), detail)
        self.attempts.setdefault(nid, []).append(attempt)
        return attempt

    # -- delivery -----------------------------------------------------------

    def deliver(self, notification: Notification) -> DeliveryAttempt:
        """Deliver one notification, retrying webhooks per the retry policy.

        Never raises for remote failures; the returned attempt is the last
        one made and ``self.attempts`` holds the full history.
        """
        nid = notification.notification_id
        with self._lock:
            self.notifications.setdefault(nid, notification)
        if notification.delivery_state not in (DeliveryState.PENDING,):
            raise ValidationError(f"notification {nid} is {notification.delivery_state.value}, not deliverable")
        sub = self.subscriptions.get(notification.subscription_id)
        if sub is None:
            attempt = self._record(nid, 1, Outcome.PERMANENT_FAILURE, "unknown subscription")
            self._set_state(notification, DeliveryState.FAILED, attempt)
            return attempt
        if self.recheck is not None and not self.recheck(notification):
            attempt = self._record(nid, 1, Outcome.PERMANENT_FAILURE, "predicate recheck failed")
            log.error("refusing to dispatch %s: predicate recheck failed", nid)
            self._set_state(notification, DeliveryState.FAILED, attempt)
            return attempt
        if sub.notification_method is NotificationMethod.POLLING_QUEUE:
            with self._lock:
                self._put(notification, insert=True)
            attempt = self._record(nid, 1, Outcome.SUCCESS, "queued")
            self._set_state(notification, DeliveryState.DELIVERED, attempt)
            return attempt
        return self._deliver_webhook(notification, sub)

    def _deliver_webhook(self, notification: Notification, sub: Subscription) -> DeliveryAttempt:
        nid = notification.notification_id
        body = webhook_body(notification)
        headers = {"Content-Type": "text/plain; charset=utf-8"}
        if sub.webhook_secret:
            headers[SIGNATURE_HEADER] = sign_body(sub.webhook_secret, body)
        attempt: Optional[DeliveryAttempt] = None
        for number in range(1, self.retry.max_attempts + 1):
            if number > 1:
                self.sleep(self.retry.delay(number - 1))
            try:
                # re-resolve on every attempt to defeat DNS rebinding
                validate_webhook_url(sub.webhook_url, self.resolver)
            except ValidationError as exc:
                attempt = self._record(nid, number, Outcome.PERMANENT_FAILURE, f"target rejected: {exc}")
                self._set_state(notification, DeliveryState.FAILED, attempt)
                return attempt
            try:
                status = self.transport(sub.webhook_url, body, headers, self.timeout)
            except OSError as exc:
                attempt = self._record(nid, number, Outcome.RETRYABLE_FAILURE, f"transport error: {exc}")
                continue
            if 200 <= status < 300:
                attempt = self._record(nid, number, Outcome.SUCCESS, f"HTTP {status}")
                self._set_state(notification, DeliveryState.DELIVERED, attempt)
                return attempt
            if status >= 500 or status in (408, 429):
                attempt = self._record(nid, number, Outcome.RETRYABLE_FAILURE, f"HTTP {status}")
                continue
            attempt = self._record(nid, number, Outcome.PERMANENT_FAILURE, f"HTTP {status}")
            self._set_state(notification, DeliveryState.FAILED, attempt)
            return attempt
        self._set_state(notification, DeliveryState.FAILED, attempt)
        return attempt

    # -- polling ------------------------------------------------------------

    def poll_notifications(
        self, agent_id: str, since_sequence: int = 0, limit: int = 100, *, include_acked: bool = False
    ) -> list[Notification]:
        if agent_id not in self.agents:
            raise NotFound(f"agent {agent_id!r} not found")
        if limit < 0:
            raise ValidationError("limit must be >= 0")
        with self._lock:
            queue = self._queues.get(agent_id, [])
            seqs = self._queue_seqs.get(agent_id, [])
            start = bisect.bisect_right(seqs, since_sequence)
            out = []
            for n in queue[start:]:
                if len(out) >= limit:
                    break
                if n.delivery_state is DeliveryState.ACKED and not include_acked:
                    continue
                out.append(n)
            return out

    def ack(self, agent_id: str, notification_ids: Iterable[str]) -> int:
        """Acknowledge queued notifications. Foreign or unknown ids are refused."""
        ids = list(notification_ids)
        with self._lock:
            targets = []
            for nid in ids:
                n = self.notifications.get(nid)
                if n is None or n.agent_id != agent_id:
                    raise AuthorizationError("notification does not belong to the caller")
                targets.append(n)
            count = 0
            for n in targets:
                current = self.notifications[n.notification_id]
                if current.delivery_state is DeliveryState.ACKED:
                    continue
                self._set_state(current, DeliveryState.ACKED)
                count += 1
            return count
