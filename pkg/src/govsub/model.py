"""Domain types and the pure notification predicate.

Everything here is immutable and side-effect free. The five policy
dimensions are evaluated independently and combined by conjunction::

    level               chunk sensitivity <= agent handling level
    direct_marketing    not (marketing opt-out and agent purpose is marketing)
    training_opt_out    not (training opt-out and agent trains on data)
    scientific_opt_out  not (scientific opt-out and agent purpose is scientific)
    jurisdiction        agent jurisdiction in the chunk's allowed set

An agent with ``mixed`` purpose passes both purpose-conditioned checks.
"""

from __future__ import annotations

import enum
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Optional, Union

import numpy as np

from .errors import ValidationError
from .vectors import as_embedding, meets_threshold

__all__ = [
    "DIMENSIONS",
    "ALL",
    "AllJurisdictions",
    "Purpose",
    "ChunkStatus",
    "TriggerStatus",
    "NotificationMethod",
    "PolicyProfile",
    "AgentProfile",
    "Chunk",
    "Subscription",
    "PolicyDecision",
    "normalize_policy",
    "evaluate_policy",
    "evaluate_dimension_subset",
    "check_dimensions",
    "policy_passes",
    "curation_matches",
    "notify_predicate",
]

DIMENSIONS: tuple[str, ...] = (
    "level",
    "direct_marketing",
    "training_opt_out",
    "scientific_opt_out",
    "jurisdiction",
)

MIN_LEVEL, MAX_LEVEL = 1, 5
_CODE_RE = re.compile(r"^[A-Z0-9][A-Z0-9_-]*$")


class AllJurisdictions:
    """Wildcard jurisdiction set: contains every code."""

    _instance: Optional["AllJurisdictions"] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __contains__(self, code: object) -> bool:
        return isinstance(code, str) and bool(code)

    def __repr__(self) -> str:
        return "ALL"

    def __reduce__(self):
        return (AllJurisdictions, ())


ALL = AllJurisdictions()

Jurisdictions = Union[frozenset, AllJurisdictions]


class Purpose(str, enum.Enum):
    SCIENTIFIC = "scientific"
    MARKETING = "marketing"
    MIXED = "mixed"


class ChunkStatus(str, enum.Enum):
    PROPOSED = "proposed"
    ACTIVE = "active"
    SUPERSEDED = "superseded"


class TriggerStatus(str, enum.Enum):
    ACTIVE = "active"
    PROPOSED = "proposed"
    BOTH = "both"


class NotificationMethod(str, enum.Enum):
    WEBHOOK = "webhook"
    POLLING_QUEUE = "polling_queue"


def check_level(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if not MIN_LEVEL <= int(value) <= MAX_LEVEL:
        raise ValidationError(f"{name} must be in [{MIN_LEVEL}, {MAX_LEVEL}], got {value!r}")
    return int(value)


def _check_bool(value: Any, name: str) -> bool:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    raise ValidationError(f"{name} must be a boolean, got {value!r}")


def _check_code(value: Any, name: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise ValidationError(f"{name} must be a non-empty jurisdiction code")
    code = value.strip().upper()
    if not _CODE_RE.match(code):
        raise ValidationError(f"{name}: invalid jurisdiction code {value!r}")
    return code


def _coerce_jurisdictions(value: Any) -> Jurisdictions:
    if value is ALL or value == "*":
        return ALL
    if isinstance(value, str):
        value = [value]
    try:
        codes = frozenset(_check_code(c, "allowed_jurisdictions") for c in value)
    except TypeError:
        raise ValidationError(f"allowed_jurisdictions must be a set of codes or '*', got {value!r}")
    if not codes:
        raise ValidationError("allowed_jurisdictions must not be empty")
    return codes


@dataclass(frozen=True)
class PolicyProfile:
    """A chunk's five-dimension handling declaration."""

    sensitivity_level: int
    marketing_opt_out: bool
    training_opt_out: bool
    scientific_opt_out: bool
    allowed_jurisdictions: Jurisdictions

    def __post_init__(self):
        object.__setattr__(self, "sensitivity_level", check_level(self.sensitivity_level, "sensitivity_level"))
        for name in ("marketing_opt_out", "training_opt_out", "scientific_opt_out"):
            object.__setattr__(self, name, _check_bool(getattr(self, name), name))
        object.__setattr__(self, "allowed_jurisdictions", _coerce_jurisdictions(self.allowed_jurisdictions))


@dataclass(frozen=True)
class AgentProfile:
    agent_id: str
    handling_level: int
    purpose: Purpose
    training_use: bool
    jurisdiction: str

    def __post_init__(self):
        if not isinstance(self.agent_id, str) or not self.agent_id:
            raise ValidationError("agent_id must be a non-empty string")
        object.__setattr__(self, "handling_level", check_level(self.handling_level, "handling_level"))
        try:
            object.__setattr__(self, "purpose", Purpose(self.purpose))
        except ValueError:
            raise ValidationError(f"unknown purpose {self.purpose!r}")
        object.__setattr__(self, "training_use", _check_bool(self.training_use, "training_use"))
        object.__setattr__(self, "jurisdiction", _check_code(self.jurisdiction, "jurisdiction"))


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    embedding: np.ndarray = field(compare=False, repr=False)
    status: ChunkStatus
    policy: PolicyProfile
    contributor_id: str
    created_at: float
    activated_at: Optional[float] = None
    content: str = ""

    def __post_init__(self):
        if not isinstance(self.chunk_id, str) or not self.chunk_id:
            raise ValidationError("chunk_id must be a non-empty string")
        object.__setattr__(self, "embedding", as_embedding(self.embedding))
        object.__setattr__(self, "status", ChunkStatus(self.status))
        if not isinstance(self.policy, PolicyProfile):
            raise ValidationError("chunk policy must be a PolicyProfile")
        if self.status is ChunkStatus.ACTIVE and self.activated_at is None:
            raise ValidationError("an active chunk must carry activated_at")
        if self.status is ChunkStatus.PROPOSED and self.activated_at is not None:
            raise ValidationError("a proposed chunk cannot carry activated_at")


@dataclass(frozen=True)
class Subscription:
    """A standing semantic query owned by one agent.

    Carries no policy of its own: the owner's profile is resolved at
    matching time. ``requested_max_sensitivity`` only exists to reject
    escalation attempts at creation.
    """

    subscription_id: str
    agent_id: str
    query_embedding: np.ndarray = field(compare=False, repr=False)
    similarity_threshold: float
    trigger_status: TriggerStatus = TriggerStatus.ACTIVE
    active: bool = True
    notification_method: NotificationMethod = NotificationMethod.POLLING_QUEUE
    webhook_url: Optional[str] = None
    webhook_secret: Optional[str] = field(default=None, repr=False)
    requested_max_sensitivity: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.subscription_id, str) or not self.subscription_id:
            raise ValidationError("subscription_id must be a non-empty string")
        object.__setattr__(self, "query_embedding", as_embedding(self.query_embedding))
        t = self.similarity_threshold
        if isinstance(t, bool) or not isinstance(t, (int, float, np.floating)) or not 0.0 <= float(t) <= 1.0:
            raise ValidationError(f"similarity_threshold must be in [0, 1], got {t!r}")
        object.__setattr__(self, "similarity_threshold", float(t))
        try:
            object.__setattr__(self, "trigger_status", TriggerStatus(self.trigger_status))
            object.__setattr__(self, "notification_method", NotificationMethod(self.notification_method))
        except ValueError as exc:
            raise ValidationError(str(exc))
        if self.notification_method is NotificationMethod.WEBHOOK and not self.webhook_url:
            raise ValidationError("webhook subscriptions need a webhook_url")
        if self.requested_max_sensitivity is not None:
            check_level(self.requested_max_sensitivity, "requested_max_sensitivity")


@dataclass(frozen=True)
class PolicyDecision:
    per_dimension: Mapping[str, bool]
    overall: bool

    def __post_init__(self):
        if set(self.per_dimension) != set(DIMENSIONS):
            raise ValidationError(f"per_dimension must cover exactly {DIMENSIONS}")
        if not isinstance(self.per_dimension, MappingProxyType):
            ordered = {name: bool(self.per_dimension[name]) for name in DIMENSIONS}
            object.__setattr__(self, "per_dimension", MappingProxyType(ordered))
        if bool(self.overall) != all(self.per_dimension.values()):
            raise ValidationError("overall must be the conjunction of the per-dimension results")

    @classmethod
    def from_dimensions(cls, dims: Mapping[str, bool]) -> "PolicyDecision":
        ordered = {name: bool(dims[name]) for name in DIMENSIONS}
        return cls(MappingProxyType(ordered), all(ordered.values()))

    @property
    def failed(self) -> tuple[str, ...]:
        return tuple(name for name, ok in self.per_dimension.items() if not ok)


_POLICY_FIELDS = (
    "sensitivity_level",
    "marketing_opt_out",
    "training_opt_out",
    "scientific_opt_out",
    "allowed_jurisdictions",
)


def normalize_policy(
    raw: Mapping[str, Any] | PolicyProfile | None,
    *,
    home_jurisdiction: str = "EU",
    contributor_jurisdiction: str | None = None,
) -> PolicyProfile:
    """Fill undeclared policy fields with their most restrictive value.

    Missing level becomes 5, missing opt-outs become True, and a missing
    jurisdiction set becomes the contributor's jurisdiction (or the home
    jurisdiction when that is unknown). Declared fields are validated as-is.
    """
    if isinstance(raw, PolicyProfile):
        return raw
    raw = dict(raw or {})
    unknown = set(raw) - set(_POLICY_FIELDS)
    if unknown:
        raise ValidationError(f"unknown policy fields: {sorted(unknown)}")
    default_jur = contributor_jurisdiction or home_jurisdiction
    return PolicyProfile(
        sensitivity_level=raw.get("sensitivity_level", MAX_LEVEL),
        marketing_opt_out=raw.get("marketing_opt_out", True),
        training_opt_out=raw.get("training_opt_out", True),
        scientific_opt_out=raw.get("scientific_opt_out", True),
        allowed_jurisdictions=raw.get("allowed_jurisdictions", frozenset([_check_code(default_jur, "home_jurisdiction")])),
    )


def _dimension_values(agent: AgentProfile, policy: PolicyProfile) -> dict[str, bool]:
    return {
        "level": policy.sensitivity_level <= agent.handling_level,
        "direct_marketing": not (policy.marketing_opt_out and agent.purpose is Purpose.MARKETING),
        "training_opt_out": not (policy.training_opt_out and agent.training_use),
        "scientific_opt_out": not (policy.scientific_opt_out and agent.purpose is Purpose.SCIENTIFIC),
        "jurisdiction": agent.jurisdiction in policy.allowed_jurisdictions,
    }


def evaluate_policy(agent: AgentProfile, policy: PolicyProfile) -> PolicyDecision:
    return PolicyDecision.from_dimensions(_dimension_values(agent, policy))


def check_dimensions(enabled: Iterable[str]) -> frozenset[str]:
    enabled = frozenset(enabled)
    unknown = enabled - set(DIMENSIONS)
    if unknown:
        raise ValidationError(f"unknown policy dimensions: {sorted(unknown)}")
    return enabled


def evaluate_dimension_subset(agent: AgentProfile, policy: PolicyProfile, enabled: Iterable[str]) -> PolicyDecision:
    """Evaluate only the ``enabled`` dimensions; disabled ones pass."""
    enabled = check_dimensions(enabled)
    values = _dimension_values(agent, policy)
    return PolicyDecision.from_dimensions({k: (v if k in enabled else True) for k, v in values.items()})


def policy_passes(agent: AgentProfile, policy: PolicyProfile, enabled: frozenset[str] | None = None) -> bool:
    """Short-circuit form of ``evaluate_dimension_subset(...).overall`` for the hot path.

    ``enabled=None`` means all five dimensions; otherwise pass a set
    already checked by :func:`check_dimensions`.
    """
    on = enabled.__contains__ if enabled is not None else (lambda _: True)
    if on("level") and policy.sensitivity_level > agent.handling_level:
        return False
    if on("direct_marketing") and policy.marketing_opt_out and agent.purpose is Purpose.MARKETING:
        return False
    if on("training_opt_out") and policy.training_opt_out and agent.training_use:
        return False
    if on("scientific_opt_out") and policy.scientific_opt_out and agent.purpose is Purpose.SCIENTIFIC:
        return False
    if on("jurisdiction") and agent.jurisdiction not in policy.allowed_jurisdictions:
        return False
    return True


def curation_matches(status: ChunkStatus, trigger: TriggerStatus) -> bool:
    status = ChunkStatus(status)
    trigger = TriggerStatus(trigger)
    if status is ChunkStatus.SUPERSEDED:
        return False
    if trigger is TriggerStatus.BOTH:
        return True
    return status.value == trigger.value


def notify_predicate(subscription: Subscription, agent: AgentProfile, chunk: Chunk, similarity: float) -> bool:
    return (
        meets_threshold(similarity, subscription.similarity_threshold)
        and evaluate_policy(agent, chunk.policy).overall
        and curation_matches(chunk.status, subscription.trigger_status)
    )
