"""The five benchmark experiments. Each returns a plain dict with rows, checks and timing."""

from __future__ import annotations

import gc
import itertools
import time
from dataclasses import replace
from collections.abc import Iterable
from typing import Any, Optional

import numpy as np

from ..engine import Engine, EngineConfig
from ..errors import AuthorizationError
from ..index import HnswParams
from ..lifecycle import ChunkEvent, EventType
from ..matching import Trigger, compute_metrics, oracle_notifications
from ..model import (
    ALL,
    DIMENSIONS,
    AgentProfile,
    Chunk,
    ChunkStatus,
    PolicyProfile,
    Purpose,
    Subscription,
    TriggerStatus,
    evaluate_policy,
)
from ..vectors import normalize
from .scenario import EventKind, Scenario, make_subscriptions

__all__ = [
    "ABLATION_CHAIN",
    "run_engine",
    "run_compliance",
    "run_ablation",
    "run_curation",
    "run_scalability",
    "run_adversarial",
    "adversarial_fixture",
]

ABLATION_CHAIN: tuple[tuple[str, ...], ...] = (
    (),
    ("level",),
    ("level", "direct_marketing"),
    ("level", "direct_marketing", "training_opt_out"),
    DIMENSIONS,
)


def _ticker():
    counter = itertools.count()
    return lambda: float(next(counter))


def run_engine(
    scenario: Scenario,
    *,
    governed: bool = True,
    enabled_dims: Iterable[str] = DIMENSIONS,
    hold_back: bool = False,
    chunk_ids=None,
    index_kind: str = "hnsw",
    verify: bool = False,
) -> Engine:
    """Register the scenario's agents and subscriptions, then replay its event schedule."""
    cfg = scenario.config
    engine = Engine(
        EngineConfig(
            embedding_dim=cfg.embedding_dim,
            hnsw=HnswParams(seed=cfg.seed),
            index_kind=index_kind,
            governed=governed,
            enabled_dims=tuple(enabled_dims),
            verify=verify,
        ),
        clock=_ticker(),
    )
    for agent in scenario.agents:
        engine.register_agent(agent)
    for sub in scenario.subscriptions:
        engine.create_subscription(
            sub.agent_id,
            sub.query_embedding,
            sub.similarity_threshold,
            sub.trigger_status,
            sub.notification_method,
            subscription_id=sub.subscription_id,
        )
    by_id = {c.chunk_id: c for c in scenario.chunks}
    for ev in scenario.schedule(hold_back=hold_back, chunk_ids=chunk_ids):
        if ev.kind is EventKind.CREATE:
            c = by_id[ev.chunk_id]
            engine.submit_chunk(c.content, c.embedding, c.policy, c.contributor_id, chunk_id=c.chunk_id, timestamp=ev.timestamp)
        else:
            engine.transition_chunk(ev.chunk_id, ChunkStatus.ACTIVE, timestamp=ev.timestamp)
    return engine


def _keys(engine: Engine) -> set[tuple[str, str, str]]:
    return set(engine.pipeline.emitted)


def _sorted(keys) -> list[list[str]]:
    return [list(k) for k in sorted(keys)]


def _oracles(scenario: Scenario, chunks: list[Chunk], enabled=DIMENSIONS):
    agents = scenario.agent_map
    gov = oracle_notifications(chunks, scenario.subscriptions, agents, "governed", enabled)
    ungov = oracle_notifications(chunks, scenario.subscriptions, agents, "ungoverned")
    return gov, ungov


def _policy_failures(engine: Engine, agents: dict[str, AgentProfile]) -> int:
    """Emitted notifications whose recomputed policy decision fails on any dimension."""
    chunks = {c.chunk_id: c for c in engine.chunks}
    return sum(
        1 for n in engine.pipeline.emitted.values() if not evaluate_policy(agents[n.agent_id], chunks[n.chunk_id].policy).overall
    )


# -- compliance ---------------------------------------------------------------


def run_compliance(scenario: Scenario) -> dict[str, Any]:
    """Governed vs ungoverned engine over the full schedule (every chunk activated)."""
    t0 = time.perf_counter()
    governed = run_engine(scenario, governed=True)
    t1 = time.perf_counter()
    ungoverned = run_engine(scenario, governed=False)
    t2 = time.perf_counter()
    chunks = list(governed.chunks)
    oracle_gov, oracle_ungov = _oracles(scenario, chunks)
    t3 = time.perf_counter()

    agents = scenario.agent_map
    rows = {}
    for mode, engine in (("governed", governed), ("ungoverned", ungoverned)):
        m = compute_metrics(engine.pipeline.emitted.values(), oracle_gov, oracle_ungov)
        rows[mode] = {
            "notifications": m.notifications,
            "violations": m.violations,
            "spurious": m.spurious,
            "compliance_rate": m.compliance_rate,
            "true_positives": m.true_positives,
            "authorized_total": m.authorized_total,
            "recall": m.recall,
            "recomputed_policy_failures": _policy_failures(engine, agents),
        }
    gov_keys, ungov_keys = _keys(governed), _keys(ungoverned)
    forbidden = oracle_ungov - oracle_gov
    checks = {
        "governed_zero_violations": rows["governed"]["violations"] == 0
        and rows["governed"]["recomputed_policy_failures"] == 0,
        "governed_equals_oracle": gov_keys == oracle_gov,
        "governed_recall_is_one": rows["governed"]["recall"] == 1.0,
        "ungoverned_equals_oracle": ungov_keys == oracle_ungov,
        "ungoverned_violations_equal_set_difference": rows["ungoverned"]["violations"] == len(forbidden),
        "ungoverned_recall_is_one": rows["ungoverned"]["recall"] == 1.0,
    }
    return {
        "rows": rows,
        "checks": checks,
        "oracle_governed": _sorted(oracle_gov),
        "oracle_ungoverned": _sorted(oracle_ungov),
        "emitted_governed": _sorted(gov_keys),
        "emitted_ungoverned": _sorted(ungov_keys),
        "timing": {"governed_s": t1 - t0, "ungoverned_s": t2 - t1, "oracle_s": t3 - t2},
    }


# -- ablation -----------------------------------------------------------------


def adversarial_fixture(dim: int = 64) -> Scenario:
    """One chunk/agent pair per dimension, blocked by that dimension alone.

    Each pair sits on its own basis direction so it matches nothing else.
    """
    from .scenario import ScenarioConfig

    if dim < len(DIMENSIONS):
        raise ValueError("fixture needs at least one axis per dimension")
    base_agent = dict(handling_level=3, purpose=Purpose.MIXED, training_use=False, jurisdiction="EU")
    base_policy = dict(
        sensitivity_level=1,
        marketing_opt_out=False,
        training_opt_out=False,
        scientific_opt_out=False,
        allowed_jurisdictions=ALL,
    )
    tweaks = {
        "level": ({}, {"sensitivity_level": 5}),
        "direct_marketing": ({"purpose": Purpose.MARKETING}, {"marketing_opt_out": True}),
        "training_opt_out": ({"training_use": True}, {"training_opt_out": True}),
        "scientific_opt_out": ({"purpose": Purpose.SCIENTIFIC}, {"scientific_opt_out": True}),
        "jurisdiction": ({"jurisdiction": "US"}, {"allowed_jurisdictions": frozenset({"EU"})}),
    }
    agents, chunks, subs = [], [], []
    for i, dim_name in enumerate(DIMENSIONS):
        agent_kw, policy_kw = tweaks[dim_name]
        agent = AgentProfile(agent_id=f"fx-agent-{dim_name}", **{**base_agent, **agent_kw})
        axis = np.zeros(dim)
        axis[i] = 1.0
        axis = normalize(axis)
        chunks.append(
            Chunk(
                chunk_id=f"fx-chunk-{dim_name}",
                embedding=axis,
                status=ChunkStatus.PROPOSED,
                policy=PolicyProfile(**{**base_policy, **policy_kw}),
                contributor_id="fx-contributor",
                created_at=float(i + 1),
                content=f"blocked only by {dim_name}",
            )
        )
        agents.append(agent)
        subs.append(Subscription(f"fx-sub-{dim_name}", agent.agent_id, axis, 0.7))
    config = ScenarioConfig(n_chunks=len(chunks), n_agents=len(agents), embedding_dim=dim, proposed_fraction=0.0)
    return Scenario(
        config=config,
        centers=np.eye(dim)[: len(DIMENSIONS)],
        chunks=tuple(chunks),
        chunk_domains=tuple(range(len(chunks))),
        agents=tuple(agents),
        subscriptions=tuple(subs),
        held_back=frozenset(),
        _activation_order=tuple(c.chunk_id for c in chunks),
    )


def _ablation_row(scenario: Scenario, dims, forbidden, chunk_ids=None) -> dict[str, Any]:
    engine = run_engine(scenario, enabled_dims=dims, chunk_ids=chunk_ids)
    emitted = _keys(engine)
    residual = len(emitted & forbidden)
    blocked = len(forbidden) - residual
    return {
        "dimensions": list(dims),
        "notifications": len(emitted),
        "violations": residual,
        "blocked": blocked,
        "block_rate": blocked / len(forbidden) if forbidden else 1.0,
    }


def run_ablation(scenario: Scenario, *, sample_size: Optional[int] = None) -> dict[str, Any]:
    """Enabled-dimension chain and singletons on sampled chunks, plus every subset on the fixture."""
    t0 = time.perf_counter()
    n = sample_size if sample_size is not None else scenario.config.ablation_sample
    rng = np.random.default_rng(scenario.config.seed)
    ids = [c.chunk_id for c in scenario.chunks]
    sample = sorted(ids[i] for i in rng.choice(len(ids), size=min(n, len(ids)), replace=False))
    reference = run_engine(scenario, chunk_ids=sample)
    oracle_gov, oracle_ungov = _oracles(scenario, list(reference.chunks))
    forbidden = oracle_ungov - oracle_gov

    chain = [_ablation_row(scenario, dims, forbidden, sample) for dims in ABLATION_CHAIN]
    singles = [_ablation_row(scenario, (d,), forbidden, sample) for d in DIMENSIONS]

    fixture = adversarial_fixture(scenario.config.embedding_dim)
    fx_engine = run_engine(fixture)
    fx_gov, fx_ungov = _oracles(fixture, list(fx_engine.chunks))
    fx_forbidden = fx_ungov - fx_gov
    subsets = []
    for r in range(len(DIMENSIONS) + 1):
        for dims in itertools.combinations(DIMENSIONS, r):
            row = _ablation_row(fixture, dims, fx_forbidden)
            subsets.append(row)

    blocks = [row["blocked"] for row in chain]
    checks = {
        "full_set_zero_violations": chain[-1]["violations"] == 0 and chain[-1]["block_rate"] == 1.0,
        "empty_set_blocks_nothing": chain[0]["blocked"] == 0,
        "chain_blocks_monotone": all(a <= b for a, b in zip(blocks, blocks[1:])),
        "fixture_every_proper_subset_leaks": all(
            row["violations"] >= 1 for row in subsets if len(row["dimensions"]) < len(DIMENSIONS)
        ),
        "fixture_full_set_zero_violations": all(
            row["violations"] == 0 for row in subsets if len(row["dimensions"]) == len(DIMENSIONS)
        ),
    }
    return {
        "sample": sample,
        "forbidden_total": len(forbidden),
        "chain": chain,
        "singletons": singles,
        "fixture_subsets": subsets,
        "oracle_governed": _sorted(oracle_gov),
        "oracle_ungoverned": _sorted(oracle_ungov),
        "fixture_oracle_governed": _sorted(fx_gov),
        "fixture_oracle_ungoverned": _sorted(fx_ungov),
        "checks": checks,
        "timing": {"total_s": time.perf_counter() - t0},
    }


# -- curation -----------------------------------------------------------------


def _split_by_status(keys, chunks: dict[str, Chunk]) -> tuple[int, int]:
    validated = sum(1 for k in keys if chunks[k[0]].status is ChunkStatus.ACTIVE and k[2] == Trigger.ACTIVE.value)
    return validated, len(keys) - validated


def run_curation(scenario: Scenario) -> dict[str, Any]:
    """Curation enforced (the engine) vs a bench-only variant that also matches proposed chunks.

    The unenforced variant adds, for each chunk still proposed at the end,
    the governed matches it would get from active-trigger subscriptions.
    """
    t0 = time.perf_counter()
    engine = run_engine(scenario, hold_back=True)
    chunks = {c.chunk_id: c for c in engine.chunks}
    enforced = _keys(engine)
    leaked = set()
    for c in chunks.values():
        if c.status is ChunkStatus.PROPOSED:
            for sub, _, _ in engine.pipeline.candidates(c, Trigger.ACTIVE):
                leaked.add((c.chunk_id, sub.subscription_id, "unvalidated"))
    unenforced = enforced | leaked
    e_valid, e_prop = _split_by_status(enforced, chunks)
    u_valid, u_prop = _split_by_status(unenforced, chunks)
    proposed_refs = sum(1 for k in enforced if k[2] == Trigger.PROPOSED.value or chunks[k[0]].status is ChunkStatus.PROPOSED)
    n_proposed = sum(1 for c in chunks.values() if c.status is ChunkStatus.PROPOSED)
    rows = {
        "enforced": {"total": len(enforced), "from_validated": e_valid, "from_proposed": e_prop},
        "unenforced": {"total": len(unenforced), "from_validated": u_valid, "from_proposed": u_prop},
    }
    checks = {
        "enforced_zero_from_proposed": e_prop == 0 and proposed_refs == 0,
        "unenforced_leaks_when_proposed_exist": u_prop > 0 if n_proposed and scenario.config.proposed_fraction > 0 else u_prop == 0,
        "validated_counts_agree": e_valid == u_valid,
    }
    return {
        "chunks_active": len(chunks) - n_proposed,
        "chunks_proposed": n_proposed,
        "rows": rows,
        "leaked_from_proposed": _sorted(leaked),
        "checks": checks,
        "timing": {"total_s": time.perf_counter() - t0},
    }


# -- scalability --------------------------------------------------------------


def run_scalability(
    scenario: Scenario,
    sub_counts: Iterable[int] | None = None,
    queries_per_point: Optional[int] = None,
    *,
    index_kind: str = "hnsw",
) -> dict[str, Any]:
    """Per-event matching plus policy-filter latency for growing subscription counts.

    Each point builds a fresh governed index with ``count`` subscriptions
    around the scenario's domain centers, then times activation events on
    the same sample of chunks. Runs on one thread; GC is paused while timing.
    """
    cfg = scenario.config
    counts = list(sub_counts if sub_counts is not None else cfg.scalability_points)
    q = queries_per_point if queries_per_point is not None else cfg.queries_per_point
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(len(scenario.chunks), size=min(q, len(scenario.chunks)), replace=False)
    queries = [scenario.chunks[int(i)] for i in idx]
    queries = [replace(c, status=ChunkStatus.ACTIVE, activated_at=c.created_at) for c in queries]
    rows = []
    for count in counts:
        sub_rng = np.random.default_rng([cfg.seed, count])
        subs = make_subscriptions(cfg, scenario.centers, list(scenario.agents), count, sub_rng, prefix="scale")
        engine = Engine(
            EngineConfig(embedding_dim=cfg.embedding_dim, hnsw=HnswParams(seed=cfg.seed), index_kind=index_kind),
            clock=_ticker(),
        )
        for agent in scenario.agents:
            engine.register_agent(agent)
        for s in subs:
            engine.create_subscription(s.agent_id, s.query_embedding, s.similarity_threshold, subscription_id=s.subscription_id)
        pipeline = engine.pipeline
        for c in queries[:10]:
            pipeline.candidates(c, Trigger.ACTIVE)
        lat, matches = [], 0
        gc_was = gc.isenabled()
        gc.disable()
        try:
            for seq, c in enumerate(queries, 1):
                event = ChunkEvent(EventType.ACTIVATED, c.chunk_id, c.created_at, seq)
                t = time.perf_counter_ns()
                out = pipeline.process_event(event, c)
                lat.append(time.perf_counter_ns() - t)
                matches += len(out)
        finally:
            if gc_was:
                gc.enable()
        ms = np.asarray(lat, dtype=np.float64) / 1e6
        rows.append(
            {
                "subscriptions": count,
                "queries": len(queries),
                "matches_per_event": matches / len(queries) if queries else 0.0,
                "p50_ms": float(np.percentile(ms, 50)) if len(ms) else 0.0,
                "p95_ms": float(np.percentile(ms, 95)) if len(ms) else 0.0,
            }
        )
    by_count = {r["subscriptions"]: r for r in rows}
    checks = {"p95_at_least_p50": all(r["p95_ms"] >= r["p50_ms"] for r in rows)}
    ratio = None
    if 10 in by_count and 500 in by_count and by_count[10]["p50_ms"] > 0:
        ratio = by_count[500]["p50_ms"] / by_count[10]["p50_ms"]
        checks["p50_ratio_500_vs_10_below_10x"] = ratio < 10.0
    # latencies are wall-clock; only the match counts are deterministic
    return {
        "rows": [{"subscriptions": r["subscriptions"], "queries": r["queries"], "matches_per_event": r["matches_per_event"]} for r in rows],
        "checks": checks,
        "timing": {"latency": [{k: r[k] for k in ("subscriptions", "p50_ms", "p95_ms")} for r in rows], "p50_ratio_500_vs_10": ratio},
    }


# -- adversarial --------------------------------------------------------------


def run_adversarial(scenario: Scenario, *, sample_size: Optional[int] = None) -> dict[str, Any]:
    """Escalated subscription attempts, then cross-level leaks on sampled high-sensitivity chunks."""
    t0 = time.perf_counter()
    cfg = scenario.config
    engine = run_engine(scenario, governed=True)
    before = {e[0] for e in engine.index.entries()}
    attempts = rejected = 0
    for agent in scenario.agents:
        for level in range(agent.handling_level + 1, 6):
            attempts += 1
            try:
                engine.create_subscription(
                    agent.agent_id, scenario.centers[0], cfg.similarity_threshold, requested_max_sensitivity=level
                )
            except AuthorizationError:
                rejected += 1
    after = {e[0] for e in engine.index.entries()}
    index_untouched = before == after and len(engine.index) == len(scenario.subscriptions)

    n = sample_size if sample_size is not None else cfg.adversarial_sample
    high = [c for c in engine.chunks if c.policy.sensitivity_level >= 4]
    rng = np.random.default_rng(cfg.seed)
    picked = sorted(high[int(i)].chunk_id for i in rng.choice(len(high), size=min(n, len(high)), replace=False)) if high else []
    ungoverned = run_engine(scenario, governed=False, chunk_ids=picked) if picked else None

    agents = scenario.agent_map
    chunks = {c.chunk_id: c for c in engine.chunks}
    subs = {s.subscription_id: s for s in scenario.subscriptions}

    def cross_level(keys):
        return {
            k for k in keys
            if k[0] in chunks and chunks[k[0]].policy.sensitivity_level > agents[subs[k[1]].agent_id].handling_level
        }

    picked_set = set(picked)
    ungov_leaks = cross_level(_keys(ungoverned)) if ungoverned else set()
    gov_leaks = cross_level(k for k in _keys(engine) if k[0] in picked_set)
    at_risk = len({k[0] for k in ungov_leaks})
    vacuous = not ungov_leaks
    prevention = 1.0 if vacuous else 1.0 - len(gov_leaks) / len(ungov_leaks)
    rows = {
        "escalation": {
            "attempts": attempts,
            "rejected": rejected,
            "rejection_rate": rejected / attempts if attempts else 1.0,
            "index_untouched": index_untouched,
        },
        "cross_level": {
            "sampled_chunks": len(picked),
            "chunks_at_risk": at_risk,
            "ungoverned_leaks": len(ungov_leaks),
            "governed_leaks": len(gov_leaks),
            "prevention_rate": prevention,
            "vacuous": vacuous,
        },
    }
    checks = {
        "all_escalations_rejected": rejected == attempts and index_untouched,
        "cross_level_prevention_complete": not gov_leaks,
    }
    return {
        "sample": picked,
        "rows": rows,
        "ungoverned_cross_level": _sorted(ungov_leaks),
        "checks": checks,
        "timing": {"total_s": time.perf_counter() - t0},
    }
