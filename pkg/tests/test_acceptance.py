"""Acceptance gate: one test per criterion, each recording a pass/fail summary line."""

import functools
import json
import shutil
import time
from dataclasses import fields, replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from govsub import codec
from govsub.bench import (
    ScenarioConfig,
    build_report,
    generate_scenario,
    run_ablation,
    run_adversarial,
    run_compliance,
    run_curation,
    run_scalability,
    strip_timing,
)
from govsub.bench.experiments import ABLATION_CHAIN
from govsub.bench.scenario import make_subscriptions
from govsub.index import ExactIndex, HnswIndex, HnswParams, exact_match, hnsw_match
from govsub.model import (
    ALL,
    DIMENSIONS,
    AgentProfile,
    Chunk,
    ChunkStatus,
    PolicyProfile,
    Subscription,
    TriggerStatus,
    evaluate_dimension_subset,
    evaluate_policy,
    normalize_policy,
    notify_predicate,
)
from govsub.service import ADMIN, EventLog, Service, ServiceConfig, recover

from conftest import FakeClock

pytestmark = pytest.mark.slow

# tolerances and targets, pinned
SEED = 42
SOUNDNESS_RUNTIME_S = 60.0
HNSW_RUNTIME_S = 120.0
HNSW_RECALL_AT_93 = 1.0
HNSW_RECALL_AT_1000 = 0.99
HNSW_QUERIES = 1000
LATENCY_RATIO_LIMIT = 10.0
PROPERTY_CASES = 10_000


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(ScenarioConfig(seed=SEED))


@pytest.fixture(scope="module")
def compliance(scenario):
    t0 = time.perf_counter()
    result = run_compliance(scenario)
    return result, time.perf_counter() - t0


def _keyset(rows):
    return {tuple(k) for k in rows}


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_policy_soundness(criterion, compliance, scenario):
    with criterion(1, "policy soundness") as c:
        result, elapsed = compliance
        gov = result["rows"]["governed"]
        agents = scenario.agent_map
        subs = {s.subscription_id: s for s in scenario.subscriptions}
        policies = {ch.chunk_id: ch.policy for ch in scenario.chunks}
        failing = [
            k for k in _keyset(result["emitted_governed"])
            if not evaluate_policy(agents[subs[k[1]].agent_id], policies[k[0]]).overall
        ]
        c.detail = (f"{gov['notifications']} governed notifications, {len(failing)} fail a recomputed dimension, "
                    f"compliance {gov['compliance_rate']:.0%}, {elapsed:.1f}s")
        assert gov["notifications"] > 0
        assert failing == []
        assert gov["violations"] == 0 and gov["recomputed_policy_failures"] == 0
        assert gov["compliance_rate"] == 1.0
        assert elapsed < SOUNDNESS_RUNTIME_S


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_no_false_negatives(criterion, compliance):
    with criterion(2, "no false negatives") as c:
        result, _ = compliance
        emitted, oracle = _keyset(result["emitted_governed"]), _keyset(result["oracle_governed"])
        # the same identity at production embedding width (d=1024), on a smaller draw
        wide = run_compliance(generate_scenario(ScenarioConfig(seed=SEED, n_chunks=200, n_agents=20, embedding_dim=1024)))
        wide_ok = _keyset(wide["emitted_governed"]) == _keyset(wide["oracle_governed"])
        c.detail = (f"engine {len(emitted)} vs oracle {len(oracle)}, missing {len(oracle - emitted)}, "
                    f"extra {len(emitted - oracle)}, recall {result['rows']['governed']['recall']:.0%}; "
                    f"d=1024 set equality {wide_ok}")
        assert emitted == oracle
        assert result["rows"]["governed"]["recall"] == 1.0
        assert result["rows"]["ungoverned"]["recall"] == 1.0
        assert wide_ok and wide["oracle_governed"]


# -- 3 ------------------------------------------------------------------------


def test_criterion_3_ablation_necessity(criterion, scenario):
    with criterion(3, "ablation necessity") as c:
        r = run_ablation(scenario)
        proper = [row for row in r["fixture_subsets"] if len(row["dimensions"]) < len(DIMENSIONS)]
        full = [row for row in r["fixture_subsets"] if len(row["dimensions"]) == len(DIMENSIONS)]
        blocks = [row["blocked"] for row in r["chain"]]
        rates = [row["block_rate"] for row in r["chain"]]
        c.detail = (f"{sum(row['violations'] >= 1 for row in proper)}/{len(proper)} proper subsets leak on the fixture, "
                    f"full set leaks {full[0]['violations']}; chain block rates "
                    + " -> ".join(f"{x:.1%}" for x in rates))
        assert len(proper) == 31 and all(row["violations"] >= 1 for row in proper)
        assert full[0]["violations"] == 0
        assert [tuple(row["dimensions"]) for row in r["chain"]] == [tuple(x) for x in ABLATION_CHAIN]
        assert all(a <= b for a, b in zip(blocks, blocks[1:]))
        assert rates[0] == 0.0 and rates[-1] == 1.0
        assert r["chain"][-1]["violations"] == 0


# -- 4 ------------------------------------------------------------------------


def test_criterion_4_curation_guarantee(criterion, scenario):
    with criterion(4, "curation guarantee") as c:
        assert scenario.config.proposed_fraction == 0.262
        r = run_curation(scenario)
        enf, unenf = r["rows"]["enforced"], r["rows"]["unenforced"]
        c.detail = (f"{r['chunks_active']} active / {r['chunks_proposed']} proposed chunks; from-proposed "
                    f"enforced {enf['from_proposed']} vs unenforced {unenf['from_proposed']}")
        assert enf["from_proposed"] == 0
        assert r["checks"]["enforced_zero_from_proposed"]
        assert unenf["from_proposed"] > 0


# -- 5 ------------------------------------------------------------------------


def _recall(scenario, n_subs, queries):
    cfg = scenario.config
    subs = make_subscriptions(cfg, scenario.centers, list(scenario.agents), n_subs,
                              np.random.default_rng([cfg.seed, n_subs, 5]), prefix="fid")
    h = HnswIndex(cfg.embedding_dim, HnswParams(seed=cfg.seed))
    e = ExactIndex(cfg.embedding_dim)
    for s in subs:
        h.insert(s.subscription_id, s.query_embedding, s.similarity_threshold)
        e.insert(s.subscription_id, s.query_embedding, s.similarity_threshold)
    hit = total = 0
    for q in queries:
        want = {m.subscription_id for m in exact_match(e, q)}
        got = {m.subscription_id for m in hnsw_match(h, q)}
        assert got <= want
        hit += len(got & want)
        total += len(want)
    return hit / total if total else 1.0, total


def test_criterion_5_hnsw_fidelity(criterion, scenario):
    with criterion(5, "HNSW fidelity") as c:
        t0 = time.perf_counter()
        queries = [ch.embedding for ch in scenario.chunks[:HNSW_QUERIES]]
        assert len(queries) == HNSW_QUERIES
        r93, n93 = _recall(scenario, 93, queries)
        r1000, n1000 = _recall(scenario, 1000, queries)
        elapsed = time.perf_counter() - t0
        c.detail = f"recall {r93:.4f} at 93 subs ({n93} matches), {r1000:.4f} at 1000 subs ({n1000} matches), {elapsed:.1f}s"
        assert r93 >= HNSW_RECALL_AT_93
        assert r1000 >= HNSW_RECALL_AT_1000
        assert elapsed < HNSW_RUNTIME_S


# -- 6 ------------------------------------------------------------------------


def test_criterion_6_scalability_shape(criterion, scenario):
    with criterion(6, "scalability shape") as c:
        r = run_scalability(scenario, [10, 50, 100, 500])
        lat = {row["subscriptions"]: row for row in r["timing"]["latency"]}
        ratio = lat[500]["p50_ms"] / lat[10]["p50_ms"]
        c.detail = "p50 ms " + ", ".join(f"{k}:{v['p50_ms']:.3f}" for k, v in lat.items()) + f"; ratio 500/10 = {ratio:.2f}x"
        assert ratio < LATENCY_RATIO_LIMIT
        assert all(row["p95_ms"] >= row["p50_ms"] for row in lat.values())


# -- 7 ------------------------------------------------------------------------


def test_criterion_7_adversarial(criterion, scenario):
    with criterion(7, "adversarial") as c:
        r = run_adversarial(scenario)
        esc, cl = r["rows"]["escalation"], r["rows"]["cross_level"]
        c.detail = (f"escalations rejected {esc['rejected']}/{esc['attempts']}; {cl['sampled_chunks']} sampled chunks, "
                    f"{cl['chunks_at_risk']} at risk, {cl['ungoverned_leaks']} ungoverned vs {cl['governed_leaks']} governed "
                    f"cross-level deliveries, prevention {cl['prevention_rate']:.0%}"
                    + (" (vacuous)" if cl["vacuous"] else ""))
        assert esc["attempts"] > 0 and esc["rejection_rate"] == 1.0 and esc["index_untouched"]
        assert cl["sampled_chunks"] == 50
        assert cl["governed_leaks"] == 0 and cl["prevention_rate"] == 1.0
        assert not cl["vacuous"]


# -- 8 ------------------------------------------------------------------------


def _full_report(seed):
    s = generate_scenario(ScenarioConfig(seed=seed))
    results = {
        "compliance": run_compliance(s),
        "ablation": run_ablation(s),
        "curation": run_curation(s),
        "scalability": run_scalability(s),
        "adversarial": run_adversarial(s),
    }
    return json.dumps(strip_timing(build_report(s, results)), sort_keys=True, indent=1).encode()


def _drive_service(scenario, log_path):
    cfg = ServiceConfig(embedding_dim=scenario.config.embedding_dim, admin_token="t", log_path=str(log_path))
    svc = Service(cfg, event_log=EventLog(log_path), clock=FakeClock())
    for a in scenario.agents:
        svc.register_agent(a)
    for s in scenario.subscriptions:
        svc.create_subscription(s.agent_id, s.query_embedding, s.similarity_threshold, s.trigger_status)
    by_id = {ch.chunk_id: ch for ch in scenario.chunks}
    for ev in scenario.schedule(hold_back=True):
        if ev.kind.value == "create":
            ch = by_id[ev.chunk_id]
            svc.submit_chunk(ch.contributor_id, ch.content, ch.embedding, ch.policy, chunk_id=ch.chunk_id)
        else:
            svc.transition_chunk(ADMIN, ev.chunk_id, "active")
    return cfg, svc


def test_criterion_8_determinism_and_recovery(criterion, scenario, tmp_path):
    with criterion(8, "determinism and recovery") as c:
        first, second = _full_report(SEED), _full_report(SEED)
        identical = first == second

        log_path = tmp_path / "events.log"
        cfg, svc = _drive_service(scenario, log_path)
        before = [codec.dumps(n) for n in svc.engine.notifications]
        digest = svc.engine.state_digest()
        svc.log._fh.flush()
        # crash: the process dies without closing; a torn record trails the durable prefix
        crashed = tmp_path / "crashed.log"
        shutil.copyfile(log_path, crashed)
        with open(crashed, "ab") as fh:
            fh.write(b"REC 999999 notification_emit 500 deadbeef\n@Notifi")
        svc.log.close()
        recovered, report = recover(replace(cfg, log_path=str(crashed)), clock=FakeClock())
        after = [codec.dumps(n) for n in recovered.engine.notifications]
        recovered.log.close()
        c.detail = (f"reports byte-identical modulo timing: {identical} ({len(first)} bytes); replayed "
                    f"{report.records_applied} records, {len(after)}/{len(before)} notifications identical: "
                    f"{after == before}, truncated tail detected: {report.truncated}")
        assert identical
        assert len(before) > 0
        assert after == before
        assert recovered.engine.state_digest() == digest
        assert report.truncated and report.mismatches == []


# -- 9 ------------------------------------------------------------------------

codes = st.sampled_from(["EU", "US", "UK", "CH", "JP", "BR", "IN", "CA"])
agents = st.builds(
    AgentProfile,
    agent_id=st.just("a"),
    handling_level=st.integers(1, 5),
    purpose=st.sampled_from(["scientific", "marketing", "mixed"]),
    training_use=st.booleans(),
    jurisdiction=codes,
)
jurisdiction_sets = st.one_of(st.just(ALL), st.frozensets(codes, min_size=1))
policies = st.builds(
    PolicyProfile,
    sensitivity_level=st.integers(1, 5),
    marketing_opt_out=st.booleans(),
    training_opt_out=st.booleans(),
    scientific_opt_out=st.booleans(),
    allowed_jurisdictions=jurisdiction_sets,
)
FIELD_DIMENSION = {
    "sensitivity_level": "level",
    "marketing_opt_out": "direct_marketing",
    "training_opt_out": "training_opt_out",
    "scientific_opt_out": "scientific_opt_out",
    "allowed_jurisdictions": "jurisdiction",
}
PROPERTY_SETTINGS = settings(
    max_examples=PROPERTY_CASES, deadline=None, database=None, suppress_health_check=list(HealthCheck)
)


def _run_counted(test):
    calls = []

    @functools.wraps(test)
    def wrapped(*args, **kwargs):
        calls.append(1)
        test(*args, **kwargs)

    return calls, wrapped


def test_criterion_9_property_suites(criterion):
    with criterion(9, "core-model property suites") as c:
        counts = {}

        # soundness per dimension
        def soundness(agent, policy):
            d = evaluate_policy(agent, policy)
            assert d.overall == all(d.per_dimension.values())
            if not all(d.per_dimension.values()):
                assert not d.overall

        # dimension independence: toggle one policy field, only its dimension may change
        def independence(agent, policy, field, data):
            if field == "sensitivity_level":
                new = data.draw(st.integers(1, 5).filter(lambda x: x != policy.sensitivity_level))
            elif field == "allowed_jurisdictions":
                new = data.draw(jurisdiction_sets.filter(lambda j: j != policy.allowed_jurisdictions))
            else:
                new = not getattr(policy, field)
            before = evaluate_policy(agent, policy).per_dimension
            after = evaluate_policy(agent, replace(policy, **{field: new})).per_dimension
            changed = {k for k in DIMENSIONS if before[k] != after[k]}
            assert changed <= {FIELD_DIMENSION[field]}

        # monotonicity in handling level
        def monotone(agent, policy):
            if agent.handling_level < 5 and evaluate_policy(agent, policy).overall:
                assert evaluate_policy(replace(agent, handling_level=agent.handling_level + 1), policy).overall

        # normalize_policy idempotence over partial declarations
        def idempotent(raw, home, contributor):
            once = normalize_policy(raw, home_jurisdiction=home, contributor_jurisdiction=contributor)
            assert normalize_policy(once, home_jurisdiction=home, contributor_jurisdiction=contributor) == once
            as_mapping = {f.name: getattr(once, f.name) for f in fields(once)}
            assert normalize_policy(as_mapping, home_jurisdiction=home) == once

        # threshold >= semantics: at the threshold behaves like just above it
        def threshold(agent, policy, thr, eps, status, trigger):
            vec = np.array([1.0, 0.0])
            chunk = Chunk("c", vec, status, policy, "x", 1.0, None if status is ChunkStatus.PROPOSED else 2.0)
            sub = Subscription("s", "a", vec, thr, trigger)
            at = notify_predicate(sub, agent, chunk, thr)
            above = notify_predicate(sub, agent, chunk, min(1.0, thr + eps))
            assert at == above
            below = notify_predicate(sub, agent, chunk, thr - 1e-6) if thr >= 1e-6 else False
            assert not below or at

        # ablation consistency: all five enabled equals the full evaluation
        def ablation(agent, policy):
            assert evaluate_dimension_subset(agent, policy, DIMENSIONS) == evaluate_policy(agent, policy)

        partial = st.fixed_dictionaries({}, optional={
            "sensitivity_level": st.integers(1, 5),
            "marketing_opt_out": st.booleans(),
            "training_opt_out": st.booleans(),
            "scientific_opt_out": st.booleans(),
            "allowed_jurisdictions": jurisdiction_sets,
        })
        suites = {
            "soundness per dimension": (soundness, (agents, policies)),
            "dimension independence": (independence, (agents, policies, st.sampled_from(list(FIELD_DIMENSION)), st.data())),
            "level monotonicity": (monotone, (agents, policies)),
            "normalize idempotence": (idempotent, (partial, codes, st.one_of(st.none(), codes))),
            "threshold >= semantics": (threshold, (agents, policies, st.floats(0.0, 1.0), st.floats(1e-12, 1e-9),
                                                   st.sampled_from(list(ChunkStatus)), st.sampled_from(list(TriggerStatus)))),
            "ablation consistency": (ablation, (agents, policies)),
        }
        for name, (fn, strategies) in suites.items():
            calls, wrapped = _run_counted(fn)
            PROPERTY_SETTINGS(given(*strategies)(wrapped))()
            counts[name] = len(calls)
        c.detail = ", ".join(f"{k} {v}" for k, v in counts.items())
        assert all(v >= PROPERTY_CASES for v in counts.values()), counts
