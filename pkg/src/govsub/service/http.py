"""WSGI front end. Request and response bodies use the canonical text format.

Routes::

    POST   /v1/agents                    operator token; body @AgentProfile
    POST   /v1/chunks                    agent token;    body @ChunkSubmission
    POST   /v1/chunks/{id}/status        curator token;  body @StatusChange
    GET    /v1/chunks/{id}               agent token
    POST   /v1/subscriptions             agent token;    body @SubscriptionRequest
    DELETE /v1/subscriptions/{id}        owning agent or operator
    GET    /v1/notifications             agent token; ?since=&limit=&include_acked=
    POST   /v1/notifications/ack         agent token;    body @AckRequest
"""

from __future__ import annotations

import logging
import re
import typing
from dataclasses import dataclass
from socketserver import ThreadingMixIn
from typing import Any, Callable, Optional
from urllib.parse import parse_qs
from wsgiref.simple_server import WSGIRequestHandler, WSGIServer, make_server

import numpy as np

from .. import codec
from ..errors import AccessDenied, AuthorizationError, GovsubError, NotFound, StateError, ValidationError
from ..model import AgentProfile, PolicyProfile
from .core import Service

__all__ = ["ChunkSubmission", "StatusChange", "SubscriptionRequest", "AckRequest", "make_app", "serve"]

log = logging.getLogger(__name__)

MEDIA_TYPE = "text/plain; charset=utf-8"
MAX_BODY = 1 << 20


@codec.register
@dataclass(frozen=True)
class ChunkSubmission:
    content: str
    embedding: np.ndarray
    chunk_id: Optional[str] = None


@codec.register
@dataclass(frozen=True)
class StatusChange:
    status: str


@codec.register
@dataclass(frozen=True)
class SubscriptionRequest:
    query_embedding: np.ndarray
    similarity_threshold: float = 0.7
    trigger_status: str = "active"
    notification_method: str = "polling_queue"
    webhook_url: Optional[str] = None
    requested_max_sensitivity: Optional[int] = None


@codec.register
@dataclass(frozen=True)
class AckRequest:
    notification_ids: tuple[str, ...]


@codec.register
@dataclass(frozen=True)
class AgentRegistration:
    agent_id: str
    token: str


@codec.register
@dataclass(frozen=True)
class ChunkReceipt:
    chunk_id: str
    status: str
    created_at: float


@codec.register
@dataclass(frozen=True)
class AckResult:
    acknowledged: int


@codec.register
@dataclass(frozen=True)
class Error:
    status: int
    message: str


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


_REASONS = {200: "OK", 201: "Created", 400: "Bad Request", 401: "Unauthorized", 403: "Forbidden",
            404: "Not Found", 405: "Method Not Allowed", 409: "Conflict", 413: "Payload Too Large",
            500: "Internal Server Error"}

_POLICY_HINTS = typing.get_type_hints(PolicyProfile)


def _one(text: str, cls: type) -> tuple[Any, dict[str, str]]:
    records = codec.parse_records(text)
    if len(records) != 1:
        raise ValidationError(f"expected one @{cls.__name__} record")
    name, flat = records[0]
    if name != cls.__name__:
        raise ValidationError(f"expected @{cls.__name__}, got @{name}")
    return codec.build(cls, flat), flat


def _declared_policy(flat: dict[str, str]) -> dict[str, Any]:
    """Only the policy fields the contributor actually sent; the rest is normalized worst-case."""
    raw = {}
    for key, value in flat.items():
        if not key.startswith("policy."):
            continue
        name = key[len("policy."):]
        if name not in _POLICY_HINTS:
            raise ValidationError(f"unknown policy field {name!r}")
        raw[name] = codec.decode_value(_POLICY_HINTS[name], value)
    return raw


class _Router:
    def __init__(self):
        self.routes: list[tuple[str, re.Pattern, Callable]] = []

    def add(self, method: str, pattern: str):
        rx = re.compile("^" + re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", pattern) + "$")

        def deco(fn):
            self.routes.append((method, rx, fn))
            return fn

        return deco

    def resolve(self, method: str, path: str):
        allowed = False
        for m, rx, fn in self.routes:
            match = rx.match(path)
            if match:
                if m == method:
                    return fn, match.groupdict()
                allowed = True
        raise HttpError(405 if allowed else 404, "method not allowed" if allowed else "no such route")


def make_app(service: Service):
    """Build the WSGI callable for ``service``."""
    router = _Router()

    @router.add("POST", "/v1/agents")
    def post_agent(caller, body, query):
        profile, _ = _one(body, AgentProfile)
        agent_id, token = service.register_agent(profile, caller=caller)
        return 201, [AgentRegistration(agent_id, token)]

    @router.add("POST", "/v1/chunks")
    def post_chunk(caller, body, query):
        sub, flat = _one(body, ChunkSubmission)
        chunk, _ = service.submit_chunk(caller, sub.content, sub.embedding, _declared_policy(flat), chunk_id=sub.chunk_id)
        return 201, [ChunkReceipt(chunk.chunk_id, chunk.status.value, chunk.created_at)]

    @router.add("POST", "/v1/chunks/{chunk_id}/status")
    def post_status(caller, body, query, chunk_id):
        change, _ = _one(body, StatusChange)
        event, _ = service.transition_chunk(caller, chunk_id, change.status)
        return 200, [event]

    @router.add("GET", "/v1/chunks/{chunk_id}")
    def get_chunk(caller, body, query, chunk_id):
        return 200, [service.get_chunk(caller, chunk_id)]

    @router.add("POST", "/v1/subscriptions")
    def post_subscription(caller, body, query):
        req, _ = _one(body, SubscriptionRequest)
        sub = service.create_subscription(
            caller,
            req.query_embedding,
            req.similarity_threshold,
            req.trigger_status,
            req.notification_method,
            webhook_url=req.webhook_url,
            requested_max_sensitivity=req.requested_max_sensitivity,
        )
        return 201, [sub]

    @router.add("DELETE", "/v1/subscriptions/{subscription_id}")
    def delete_subscription(caller, body, query, subscription_id):
        return 200, [service.deactivate_subscription(caller, subscription_id)]

    @router.add("GET", "/v1/notifications")
    def get_notifications(caller, body, query):
        try:
            since = int(query.get("since", ["0"])[0])
            limit = int(query.get("limit", ["100"])[0])
        except ValueError:
            raise ValidationError("since and limit must be integers") from None
        include_acked = query.get("include_acked", ["false"])[0] == "true"
        return 200, service.poll(caller, since, limit, include_acked)

    @router.add("POST", "/v1/notifications/ack")
    def post_ack(caller, body, query):
        req, _ = _one(body, AckRequest)
        return 200, [AckResult(service.ack(caller, req.notification_ids))]

    def handle(environ) -> tuple[int, list[Any]]:
        fn, params = router.resolve(environ["REQUEST_METHOD"], environ.get("PATH_INFO", ""))
        auth = environ.get("HTTP_AUTHORIZATION", "")
        token = auth[7:].strip() if auth.startswith("Bearer ") else None
        try:
            caller = service.authenticate(token)
        except AuthorizationError as exc:
            raise HttpError(401, str(exc)) from None
        try:
            length = int(environ.get("CONTENT_LENGTH") or 0)
        except ValueError:
            raise HttpError(400, "bad content length") from None
        if length > MAX_BODY:
            raise HttpError(413, "body too large")
        raw = environ["wsgi.input"].read(length) if length else b""
        try:
            body = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise HttpError(400, "body is not utf-8") from None
        query = parse_qs(environ.get("QUERY_STRING", ""))
        return fn(caller, body, query, **params)

    def app(environ, start_response):
        try:
            status, objs = handle(environ)
            payload = codec.dumps_many(objs)
        except HttpError as exc:
            status, payload = exc.status, codec.dumps(Error(exc.status, exc.message))
        except AccessDenied:
            status, payload = 404, codec.dumps(Error(404, "not found"))
        except AuthorizationError as exc:
            status, payload = 403, codec.dumps(Error(403, str(exc)))
        except NotFound:
            status, payload = 404, codec.dumps(Error(404, "not found"))
        except StateError as exc:
            status, payload = 409, codec.dumps(Error(409, str(exc)))
        except (ValidationError, GovsubError) as exc:
            status, payload = 400, codec.dumps(Error(400, str(exc)))
        except Exception:
            log.exception("unhandled error")
            status, payload = 500, codec.dumps(Error(500, "internal error"))
        data = payload.encode("utf-8")
        start_response(
            f"{status} {_REASONS.get(status, '')}",
            [("Content-Type", MEDIA_TYPE), ("Content-Length", str(len(data)))],
        )
        return [data]

    return app


class _ThreadingServer(ThreadingMixIn, WSGIServer):
    daemon_threads = True


class _QuietHandler(WSGIRequestHandler):
    def log_message(self, fmt, *args):
        log.info("%s " + fmt, self.address_string(), *args)


def serve(service: Service, host: str | None = None, port: int | None = None):
    """Serve forever on ``host:port`` (defaults from the service config)."""
    host = host or service.config.listen_host
    port = service.config.listen_port if port is None else port
    httpd = make_server(host, port, make_app(service), server_class=_ThreadingServer, handler_class=_QuietHandler)
    log.info("listening on %s:%d", host, httpd.server_port)
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()
