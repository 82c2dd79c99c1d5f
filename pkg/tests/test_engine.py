import pytest

from govsub.dispatch import Outcome
from govsub.engine import Engine, EngineConfig
from govsub.errors import AccessDenied, AuthorizationError, NotFound, SsrfError, StateError, ValidationError
from govsub.matching import DeliveryState

from conftest import FakeClock, RecordingTransport, agent, policy, public_resolver, unit

OPEN = {"sensitivity_level": 1, "marketing_opt_out": False, "training_opt_out": False,
        "scientific_opt_out": False, "allowed_jurisdictions": "*"}


def make(**kw):
    journal = []
    kw.setdefault("resolver", public_resolver)
    e = Engine(EngineConfig(embedding_dim=8, verify=True), clock=FakeClock(),
               journal=lambda t, p: journal.append(t), sleep=lambda s: None, **kw)
    return e, journal


def test_escalation_rejected_before_index():
    e, journal = make()
    e.register_agent(agent(level=3))
    with pytest.raises(AuthorizationError):
        e.create_subscription("a1", unit(1), 0.7, requested_max_sensitivity=5)
    assert len(e.index) == 0 and e.subscriptions == {} and "subscription_create" not in journal
    sub = e.create_subscription("a1", unit(1), 0.7, requested_max_sensitivity=3)
    assert sub.subscription_id in e.index


def test_subscription_validation():
    e, _ = make()
    e.register_agent(agent())
    with pytest.raises(ValidationError):
        e.create_subscription("a1", unit(1), 1.5)
    with pytest.raises(NotFound):
        e.create_subscription("nobody", unit(1), 0.7)
    with pytest.raises(SsrfError):
        e.create_subscription("a1", unit(1), 0.7, method="webhook", webhook_url="http://127.0.0.1/")
    assert len(e.index) == 0


def test_profile_update_affects_future_matches_only():
    e, _ = make()
    e.register_agent(agent(purpose="marketing"))
    e.create_subscription("a1", unit(1), 0.7)
    c1, _ = e.submit_chunk("x", unit(1), {**OPEN, "marketing_opt_out": True}, "a1")
    _, n1 = e.transition_chunk(c1.chunk_id, "active")
    assert n1 == []
    e.register_agent(agent(purpose="scientific"))
    c2, _ = e.submit_chunk("x", unit(1), {**OPEN, "marketing_opt_out": True}, "a1")
    _, n2 = e.transition_chunk(c2.chunk_id, "active")
    assert [n.chunk_id for n in n2] == [c2.chunk_id]


def test_get_chunk_hides_existence():
    e, _ = make()
    e.register_agent(agent("reader", purpose="marketing"))
    c, _ = e.submit_chunk("secret", unit(1), {**OPEN, "marketing_opt_out": True}, "reader")
    with pytest.raises(AccessDenied) as denied:
        e.get_chunk(c.chunk_id, "reader")
    with pytest.raises(AccessDenied) as missing:
        e.get_chunk("no-such-chunk", "reader")
    assert str(denied.value) == str(missing.value)
    assert isinstance(denied.value, NotFound) and isinstance(denied.value, AuthorizationError)


def test_deactivation_removes_from_index():
    e, journal = make()
    e.register_agent(agent())
    s = e.create_subscription("a1", unit(1), 0.7)
    assert e.deactivate_subscription(s.subscription_id).active is False
    assert s.subscription_id not in e.index
    assert e.deactivate_subscription(s.subscription_id).active is False  # idempotent
    with pytest.raises(NotFound):
        e.deactivate_subscription(s.subscription_id, caller="someone-else")
    c, _ = e.submit_chunk("x", unit(1), OPEN, "a1")
    assert e.transition_chunk(c.chunk_id, "active")[1] == []


def test_webhook_flow_and_journal_order():
    t = RecordingTransport(200)
    e, journal = make(transport=t)
    e.register_agent(agent())
    s = e.create_subscription("a1", unit(1), 0.7, method="webhook", webhook_url="https://example.org/h")
    assert s.webhook_secret
    c, _ = e.submit_chunk("x", unit(1), OPEN, "a1")
    _, notes = e.transition_chunk(c.chunk_id, "active")
    assert len(t.calls) == 1
    assert e.notifications[0].delivery_state is DeliveryState.DELIVERED
    assert journal == ["agent_upsert", "subscription_create", "chunk_create", "chunk_transition",
                       "notification_emit", "delivery_update"]


def test_recheck_refuses_stale_notification():
    e, _ = make()
    e.register_agent(agent())
    e.create_subscription("a1", unit(1), 0.7)
    c, _ = e.submit_chunk("x", unit(1), OPEN, "a1")
    _, [n] = e.transition_chunk(c.chunk_id, "active")
    assert e.recheck(n)
    e.register_agent(agent(level=1, purpose="marketing"))
    assert e.recheck(n)  # level 1 chunk, no opt-outs: still fine
    e.register_agent(agent(jur="US"))
    assert e.recheck(n)  # ALL jurisdictions
    e.subscriptions.pop(n.subscription_id)
    assert not e.recheck(n)


def test_superseded_chunk_keeps_notifications():
    e, _ = make()
    e.register_agent(agent())
    e.create_subscription("a1", unit(1), 0.7)
    c, _ = e.submit_chunk("x", unit(1), OPEN, "a1")
    e.transition_chunk(c.chunk_id, "active")
    ev, notes = e.transition_chunk(c.chunk_id, "superseded")
    assert notes == [] and len(e.notifications) == 1


def test_state_digest_stable():
    e1, _ = make()
    e2, _ = make()
    for e in (e1, e2):
        e.register_agent(agent())
        e.create_subscription("a1", unit(1), 0.7)
        c, _ = e.submit_chunk("x", unit(1), OPEN, "a1", chunk_id="c")
        e.transition_chunk("c", "active")
    assert e1.state_digest() == e2.state_digest()


def test_unknown_index_kind():
    with pytest.raises(ValidationError):
        Engine(EngineConfig(index_kind="lsh"))
