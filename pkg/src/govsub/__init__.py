"""Governance-aware semantic publish/subscribe."""

from .engine import Engine, EngineConfig
from .errors import AccessDenied, AuthorizationError, GovsubError, NotFound, SsrfError, StateError, ValidationError
from .index import ExactIndex, HnswIndex, HnswParams, MatchCandidate, exact_match, hnsw_match, load_snapshot, save_snapshot
from .lifecycle import ChunkEvent, ChunkStore, EventType
from .matching import MatchingPipeline, Notification, compute_metrics, oracle_notifications
from .model import (
    ALL,
    DIMENSIONS,
    AgentProfile,
    Chunk,
    ChunkStatus,
    NotificationMethod,
    PolicyDecision,
    PolicyProfile,
    Purpose,
    Subscription,
    TriggerStatus,
    curation_matches,
    evaluate_policy,
    normalize_policy,
    notify_predicate,
)
from .vectors import cosine_similarity, normalize

__version__ = "0.1.0"
