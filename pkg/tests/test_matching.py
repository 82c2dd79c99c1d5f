import numpy as np
import pytest

from govsub.index import ExactIndex, HnswIndex
from govsub.lifecycle import ChunkStore
from govsub.matching import MatchingPipeline, Trigger, compute_metrics, oracle_notifications
from govsub.model import ChunkStatus, Subscription, TriggerStatus, evaluate_policy

from conftest import agent, policy, unit


class World:
    def __init__(self, index_cls=ExactIndex, dim=8, **kw):
        self.index = index_cls(dim)
        self.subs, self.agents = {}, {}
        self.store = ChunkStore(dim, clock=iter(range(1, 10**6)).__next__)
        self.pipe = MatchingPipeline(self.index, self.subs, self.agents, verify=True, **kw)
        self.out = []

    def add_agent(self, a):
        self.agents[a.agent_id] = a

    def add_sub(self, sid, agent_id, vec, thr=0.7, trigger="active"):
        s = Subscription(sid, agent_id, vec, thr, trigger)
        self.subs[sid] = s
        self.index.insert(sid, s.query_embedding, thr)

    def create(self, vec, pol=None, cid=None):
        c, ev = self.store.create_chunk("x", vec, pol or policy(), "contrib", chunk_id=cid)
        self.out += self.pipe.process_event(ev, self.store.get(c.chunk_id))
        return c.chunk_id

    def move(self, cid, status):
        ev = self.store.transition(cid, status)
        self.out += self.pipe.process_event(ev, self.store.get(cid))
        return ev


def sim_vec(sim, dim=8):
    return unit(sim, np.sqrt(1 - sim**2), dim=dim)


def test_no_subscriptions_no_notifications():
    w = World()
    cid = w.create(unit(1))
    w.move(cid, "active")
    assert w.out == []


def test_single_authorized_match():
    w = World()
    w.add_agent(agent())
    w.add_sub("s1", "a1", unit(1))
    cid = w.create(sim_vec(0.9))
    assert w.out == []  # created events only reach review subscriptions
    w.move(cid, "active")
    assert len(w.out) == 1
    n = w.out[0]
    assert n.trigger is Trigger.ACTIVE and n.subscription_id == "s1" and n.agent_id == "a1"
    assert n.similarity == pytest.approx(0.9, abs=1e-9)


def test_review_subscriptions_fire_on_creation():
    w = World()
    w.add_agent(agent())
    w.add_sub("review", "a1", unit(1), trigger="proposed")
    w.add_sub("both", "a1", unit(1), trigger="both")
    cid = w.create(unit(1))
    assert {n.subscription_id for n in w.out} == {"review", "both"}
    w.move(cid, "active")
    assert [(n.subscription_id, n.trigger) for n in w.out[2:]] == [("both", Trigger.ACTIVE)]


def test_superseded_triggers_nothing():
    w = World()
    w.add_agent(agent())
    w.add_sub("s1", "a1", unit(1), trigger="both")
    cid = w.create(unit(1))
    w.move(cid, "active")
    before = len(w.out)
    w.move(cid, "superseded")
    assert len(w.out) == before


def test_policy_filter_and_profile_resolved_at_match_time():
    w = World()
    w.add_agent(agent(purpose="marketing"))
    w.add_sub("s1", "a1", unit(1))
    c1 = w.create(unit(1), policy(dm=True))
    w.move(c1, "active")
    assert w.out == []
    w.add_agent(agent(purpose="scientific"))  # profile update
    c2 = w.create(unit(1), policy(dm=True))
    w.move(c2, "active")
    assert [n.chunk_id for n in w.out] == [c2]


def test_unknown_agent_is_skipped_with_warning():
    w = World()
    w.add_sub("s1", "ghost", unit(1))
    cid = w.create(unit(1))
    w.move(cid, "active")
    assert w.out == [] and "ghost" in w.pipe.integrity_warnings[0]


def test_replay_is_idempotent():
    w = World()
    w.add_agent(agent())
    w.add_sub("s1", "a1", unit(1))
    cid = w.create(unit(1))
    ev = w.move(cid, "active")
    assert w.pipe.process_event(ev, w.store.get(cid)) == []
    assert len(w.out) == 1


def test_deactivated_subscription_is_ignored():
    w = World()
    w.add_agent(agent())
    w.add_sub("s1", "a1", unit(1))
    w.index.remove("s1")
    cid = w.create(unit(1))
    w.move(cid, "active")
    assert w.out == []


def _random_world(rng, index_cls, n_agents=8, n_subs=30, n_chunks=80, dim=8):
    w = World(index_cls, dim)
    purposes = ["scientific", "marketing", "mixed"]
    for i in range(n_agents):
        w.add_agent(agent(f"a{i}", int(rng.integers(1, 6)), purposes[i % 3], bool(rng.integers(2)), ["EU", "US"][i % 2]))
    centers = rng.standard_normal((3, dim))
    def near(k):
        return unit(*(centers[k] + 0.3 * rng.standard_normal(dim)), dim=dim)
    for j in range(n_subs):
        w.add_sub(f"s{j:02d}", f"a{j % n_agents}", near(j % 3), 0.7, ["active", "proposed", "both"][j % 3])
    for k in range(n_chunks):
        pol = policy(int(rng.integers(1, 6)), bool(rng.random() < 0.3), bool(rng.random() < 0.3),
                     bool(rng.random() < 0.2), frozenset({"EU"}) if rng.random() < 0.3 else policy().allowed_jurisdictions)
        cid = w.create(near(k % 3), pol)
        r = rng.random()
        if r < 0.6:
            w.move(cid, "active")
        elif r < 0.7:
            w.move(cid, "superseded")
    return w


@pytest.mark.parametrize("index_cls", [ExactIndex, HnswIndex])
def test_pipeline_equals_oracle(rng, index_cls):
    w = _random_world(rng, index_cls)
    chunks = list(w.store)
    gov = oracle_notifications(chunks, w.subs.values(), w.agents, "governed")
    ungov = oracle_notifications(chunks, w.subs.values(), w.agents, "ungoverned")
    assert {n.key for n in w.out} == gov
    assert gov < ungov
    for key in ungov - gov:
        c = w.store.get(key[0])
        assert not evaluate_policy(w.agents[w.subs[key[1]].agent_id], c.policy).overall


def test_oracle_empty_dimension_set_is_ungoverned(rng):
    w = _random_world(rng, ExactIndex)
    chunks = list(w.store)
    assert oracle_notifications(chunks, w.subs.values(), w.agents, "governed", ()) == oracle_notifications(
        chunks, w.subs.values(), w.agents, "ungoverned"
    )


def test_ungoverned_pipeline_equals_ungoverned_oracle(rng):
    w = World(governed=False)
    w.add_agent(agent(level=1))
    w.add_sub("s1", "a1", unit(1))
    cid = w.create(unit(1), policy(level=5))
    w.move(cid, "active")
    assert {n.key for n in w.out} == oracle_notifications(list(w.store), w.subs.values(), w.agents, "ungoverned")


def test_metrics_identities():
    gov = {("c1", "s1", "active"), ("c2", "s1", "active")}
    ungov = gov | {("c3", "s2", "active")}
    m = compute_metrics(gov, gov, ungov)
    assert (m.violations, m.compliance_rate, m.recall) == (0, 1.0, 1.0)
    m = compute_metrics(ungov, gov, ungov)
    assert m.violations == 1 and m.recall == 1.0 and m.compliance_rate == pytest.approx(2 / 3)
    assert compute_metrics([], gov, ungov).recall == 0.0
    assert compute_metrics([], set(), set()).recall == 1.0
    assert compute_metrics([("zz", "s9", "active")], gov, ungov).spurious == 1


def test_oracle_rejects_unknown_mode():
    with pytest.raises(ValueError):
        oracle_notifications([], [], {}, "partial")
