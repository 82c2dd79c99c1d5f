"""Seeded synthetic workload: clustered embeddings, agents, subscriptions, event schedule."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .. import codec
from ..errors import ValidationError
from ..model import ALL, AgentProfile, Chunk, ChunkStatus, PolicyProfile, Purpose, Subscription, TriggerStatus
from ..vectors import cosine_similarity, normalize

__all__ = [
    "DomainPolicy",
    "DEFAULT_DOMAINS",
    "ScenarioConfig",
    "ScheduledEvent",
    "Scenario",
    "generate_scenario",
    "make_subscriptions",
    "cluster_separation",
    "load_scenario_config",
]


@dataclass(frozen=True)
class DomainPolicy:
    """Per-domain probabilities used to draw chunk policies."""

    name: str
    p_high_sensitivity: float  # level drawn from {4, 5}, else from {1, 2, 3}
    p_marketing_opt_out: float
    p_training_opt_out: float
    p_scientific_opt_out: float
    p_restricted_jurisdiction: float  # allowed set is {restricted_to}, else ALL
    restricted_to: str = "EU"

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("p_"):
                p = getattr(self, f.name)
                if not 0.0 <= p <= 1.0:
                    raise ValidationError(f"{self.name}.{f.name} must be in [0, 1], got {p}")


DEFAULT_DOMAINS: tuple[DomainPolicy, ...] = (
    DomainPolicy("medical", 0.6, 0.5, 0.4, 0.1, 0.5),
    DomainPolicy("financial", 0.5, 0.4, 0.3, 0.1, 0.3),
    DomainPolicy("ai_safety", 0.3, 0.2, 0.5, 0.1, 0.2),
    DomainPolicy("climate", 0.1, 0.1, 0.2, 0.05, 0.1),
    DomainPolicy("cybersecurity", 0.5, 0.3, 0.3, 0.1, 0.3),
)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    n_chunks: int = 1000
    n_domains: int = 5
    n_agents: int = 50
    subs_per_agent: tuple[int, int] = (1, 3)
    similarity_threshold: float = 0.7
    embedding_dim: int = 64
    proposed_fraction: float = 0.262
    noise_sigma: float = 0.35
    domains: tuple[DomainPolicy, ...] = DEFAULT_DOMAINS
    agent_jurisdictions: tuple[str, ...] = ("EU", "US", "UK")
    p_training_use: float = 0.5
    # share of subscriptions listening for proposals; 0 keeps every subscription on active content
    review_fraction: float = 0.0
    ablation_sample: int = 200
    adversarial_sample: int = 50
    scalability_points: tuple[int, ...] = (10, 50, 100, 500)
    queries_per_point: int = 200

    def __post_init__(self):
        for name in ("n_chunks", "n_domains", "embedding_dim", "queries_per_point"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.n_agents < 0:
            raise ValidationError("n_agents must be >= 0")
        lo, hi = self.subs_per_agent
        if not 0 <= lo <= hi:
            raise ValidationError("subs_per_agent must be an ordered (min, max) range")
        for name in ("proposed_fraction", "review_fraction", "p_training_use", "similarity_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not self.domains:
            raise ValidationError("at least one domain policy is required")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def domain(self, i: int) -> DomainPolicy:
        return self.domains[i % len(self.domains)]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["domains"] = [asdict(x) for x in self.domains]
        return d

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(raw)
        if "domains" in kw:
            kw["domains"] = tuple(DomainPolicy(**d) for d in kw["domains"])
        for key in ("subs_per_agent", "agent_jurisdictions", "scalability_points"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def load_scenario_config(path: str | Path | None, **overrides) -> ScenarioConfig:
    raw = json.loads(Path(path).read_text()) if path else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig.from_dict(raw)


class EventKind(str, enum.Enum):
    CREATE = "create"
    ACTIVATE = "activate"


@codec.register
@dataclass(frozen=True)
class ScheduledEvent:
    timestamp: float
    kind: EventKind
    chunk_id: str


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    centers: np.ndarray
    chunks: tuple[Chunk, ...]  # as submitted: status proposed
    chunk_domains: tuple[int, ...]
    agents: tuple[AgentProfile, ...]
    subscriptions: tuple[Subscription, ...]
    held_back: frozenset[str]  # chunks left proposed in the curation run
    _activation_order: tuple[str, ...] = field(repr=False, default=())

    @property
    def agent_map(self) -> dict[str, AgentProfile]:
        return {a.agent_id: a for a in self.agents}

    def schedule(self, *, hold_back: bool = False, chunk_ids=None) -> list[ScheduledEvent]:
        """Every chunk is created in order, then activated in a shuffled order.

        With ``hold_back`` the chunks in :attr:`held_back` are never activated.
        ``chunk_ids`` restricts the schedule to a subset.
        """
        keep = None if chunk_ids is None else set(chunk_ids)
        events = []
        t = 0.0
        for c in self.chunks:
            if keep is None or c.chunk_id in keep:
                t += 1.0
                events.append(ScheduledEvent(t, EventKind.CREATE, c.chunk_id))
        for cid in self._activation_order:
            if (keep is None or cid in keep) and not (hold_back and cid in self.held_back):
                t += 1.0
                events.append(ScheduledEvent(t, EventKind.ACTIVATE, cid))
        return events

    def to_text(self) -> str:
        """Canonical serialization; identical seeds give identical text."""
        parts = [codec.encode_record("ScenarioConfig", {"json": json.dumps(self.config.to_dict(), sort_keys=True)})]
        parts += [codec.dumps(a) for a in self.agents]
        parts += [codec.dumps(s) for s in self.subscriptions]
        parts += [codec.dumps(c) for c in self.chunks]
        parts += [codec.dumps(e) for e in self.schedule(hold_back=True)]
        return "\n".join(parts)


def _noisy_unit(center: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    # sigma is the expected norm of the noise vector, spread evenly across components
    d = center.shape[0]
    return normalize(center + rng.normal(0.0, sigma / np.sqrt(d), d))


def _draw_policy(dp: DomainPolicy, rng: np.random.Generator) -> PolicyProfile:
    high = rng.random() < dp.p_high_sensitivity
    level = int(rng.integers(4, 6) if high else rng.integers(1, 4))
    return PolicyProfile(
        sensitivity_level=level,
        marketing_opt_out=bool(rng.random() < dp.p_marketing_opt_out),
        training_opt_out=bool(rng.random() < dp.p_training_opt_out),
        scientific_opt_out=bool(rng.random() < dp.p_scientific_opt_out),
        allowed_jurisdictions=frozenset([dp.restricted_to]) if rng.random() < dp.p_restricted_jurisdiction else ALL,
    )


def make_subscriptions(
    config: ScenarioConfig,
    centers: np.ndarray,
    agents: tuple[AgentProfile, ...] | list[AgentProfile],
    count: int,
    rng: np.random.Generator,
    *,
    prefix: str = "sub",
) -> list[Subscription]:
    """``count`` subscriptions owned by agents in round-robin order, queries drawn around domain centers."""
    subs = []
    for i in range(count):
        agent = agents[i % len(agents)]
        domain = int(rng.integers(config.n_domains))
        review = rng.random() < config.review_fraction
        subs.append(
            Subscription(
                subscription_id=f"{prefix}-{i + 1:05d}",
                agent_id=agent.agent_id,
                query_embedding=_noisy_unit(centers[domain], config.noise_sigma, rng),
                similarity_threshold=config.similarity_threshold,
                trigger_status=TriggerStatus.BOTH if review else TriggerStatus.ACTIVE,
            )
        )
    return subs


def generate_scenario(config: ScenarioConfig | None = None) -> Scenario:
    config = config or ScenarioConfig()
    # independent streams so that e.g. changing n_agents leaves chunks untouched
    s_centers, s_chunks, s_agents, s_subs, s_sched = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(5)
    )
    d = config.embedding_dim
    centers = np.stack([normalize(s_centers.standard_normal(d)) for _ in range(config.n_domains)])

    agents = []
    purposes = list(Purpose)
    for i in range(config.n_agents):
        agents.append(
            AgentProfile(
                agent_id=f"agent-{i + 1:03d}",
                handling_level=int(s_agents.integers(1, 6)),
                purpose=purposes[int(s_agents.integers(len(purposes)))],
                training_use=bool(s_agents.random() < config.p_training_use),
                jurisdiction=config.agent_jurisdictions[int(s_agents.integers(len(config.agent_jurisdictions)))],
            )
        )

    chunks, domains = [], []
    for i in range(config.n_chunks):
        dom = int(s_chunks.integers(config.n_domains))
        emb = _noisy_unit(centers[dom], config.noise_sigma, s_chunks)
        policy = _draw_policy(config.domain(dom), s_chunks)
        contributor = agents[int(s_chunks.integers(len(agents)))].agent_id if agents else "contributor-0"
        chunks.append(
            Chunk(
                chunk_id=f"chunk-{i + 1:05d}",
                embedding=emb,
                status=ChunkStatus.PROPOSED,
                policy=policy,
                contributor_id=contributor,
                created_at=float(i + 1),
                content=f"synthetic {config.domain(dom).name} chunk {i + 1}",
            )
        )
        domains.append(dom)

    subs: list[Subscription] = []
    lo, hi = config.subs_per_agent
    for agent in agents:
        for _ in range(int(s_subs.integers(lo, hi + 1))):
            subs.extend(make_subscriptions(config, centers, [agent], 1, s_subs))
    subs = [replace(s, subscription_id=f"sub-{i + 1:05d}") for i, s in enumerate(subs)]

    ids = [c.chunk_id for c in chunks]
    order = [ids[i] for i in s_sched.permutation(len(ids))]
    n_held = int(round(config.proposed_fraction * len(ids)))
    held = frozenset(ids[i] for i in s_sched.choice(len(ids), size=n_held, replace=False)) if n_held else frozenset()

    return Scenario(
        config=config,
        centers=centers,
        chunks=tuple(chunks),
        chunk_domains=tuple(domains),
        agents=tuple(agents),
        subscriptions=tuple(subs),
        held_back=held,
        _activation_order=tuple(order),
    )


def cluster_separation(scenario: Scenario, max_pairs: int = 20000) -> dict[str, float]:
    """Fractions of intra-domain pairs above and inter-domain pairs below the threshold."""
    rng = np.random.default_rng(scenario.config.seed)
    n = len(scenario.chunks)
    thr = scenario.config.similarity_threshold
    intra = inter = intra_hit = inter_hit = 0
    for _ in range(max_pairs):
        i, j = (int(x) for x in rng.integers(n, size=2))
        if i == j:
            continue
        sim = cosine_similarity(scenario.chunks[i].embedding, scenario.chunks[j].embedding)
        if scenario.chunk_domains[i] == scenario.chunk_domains[j]:
            intra += 1
            intra_hit += sim >= thr
        else:
            inter += 1
            inter_hit += sim < thr
    return {
        "intra_above_threshold": intra_hit / intra if intra else 1.0,
        "inter_below_threshold": inter_hit / inter if inter else 1.0,
    }
