import hashlib
import hmac

import pytest

from govsub import codec
from govsub.dispatch import (
    SIGNATURE_HEADER,
    Dispatcher,
    Outcome,
    RetryPolicy,
    sign_body,
    validate_webhook_url,
    webhook_body,
)
from govsub.errors import AuthorizationError, NotFound, SsrfError, ValidationError
from govsub.matching import DeliveryState, Notification, Trigger
from govsub.model import NotificationMethod, Subscription

from conftest import RecordingTransport, agent, public_resolver, unit


def test_public_url_accepted():
    t = validate_webhook_url("https://example.org/hook", public_resolver)
    assert t.host == "example.org" and t.addresses == ("93.184.216.34",)


@pytest.mark.parametrize(
    "url",
    [
        "http://127.0.0.1/hook",
        "http://169.254.169.254/latest",
        "http://10.0.0.5/x",
        "http://192.168.1.1/x",
        "http://172.16.0.1/x",
        "http://[::1]/x",
        "http://[fe80::1]/x",
        "http://[::ffff:127.0.0.1]/x",
        "http://0.0.0.0/x",
        "http://100.64.0.1/x",
    ],
)
def test_non_public_addresses_rejected(url):
    with pytest.raises(SsrfError):
        validate_webhook_url(url, public_resolver)


def test_hostname_resolving_to_private_rejected():
    with pytest.raises(SsrfError):
        validate_webhook_url("https://internal.example/hook", lambda h: ["93.184.216.34", "10.1.2.3"])


@pytest.mark.parametrize("url", ["ftp://example.org/x", "file:///etc/passwd", "https://user:pw@example.org/", "http:///nohost", "http://example.org:99999/"])
def test_bad_urls_are_validation_errors(url):
    with pytest.raises(ValidationError) as info:
        validate_webhook_url(url, public_resolver)
    assert not isinstance(info.value, SsrfError)


def test_unresolvable_host():
    def fail(host):
        raise OSError("nxdomain")

    with pytest.raises(ValidationError):
        validate_webhook_url("https://nowhere.invalid/", fail)


def _n(seq=1, agent_id="a1", sub="s1"):
    return Notification(f"n-{seq:08d}", seq, f"c{seq}", sub, agent_id, 0.9, Trigger.ACTIVE, 10.0)


def _dispatcher(transport=None, resolver=public_resolver, recheck=None, **subs_kw):
    subs = {
        "s1": Subscription("s1", "a1", unit(1), 0.7),
        "s2": Subscription("s2", "a2", unit(1), 0.7),
        "hook": Subscription("hook", "a1", unit(1), 0.7, notification_method=NotificationMethod.WEBHOOK,
                             webhook_url="https://example.org/hook", webhook_secret="k3y"),
    }
    agents = {"a1": agent("a1"), "a2": agent("a2")}
    sleeps = []
    d = Dispatcher(subs, agents, transport=transport or RecordingTransport(200), resolver=resolver,
                   sleep=sleeps.append, clock=lambda: 1.0, recheck=recheck)
    return d, sleeps


def test_queue_delivery_visible_by_poll():
    d, _ = _dispatcher()
    att = d.deliver(_n())
    assert att.outcome is Outcome.SUCCESS and att.attempt_number == 1
    [n] = d.poll_notifications("a1")
    assert n.delivery_state is DeliveryState.DELIVERED


def test_webhook_success_single_attempt_signed():
    t = RecordingTransport(204)
    d, sleeps = _dispatcher(t)
    n = _n(sub="hook")
    att = d.deliver(n)
    assert att.outcome is Outcome.SUCCESS and len(d.attempts[n.notification_id]) == 1 and sleeps == []
    url, body, headers = t.calls[0]
    expected = "sha256=" + hmac.new(b"k3y", body, hashlib.sha256).hexdigest()
    assert headers[SIGNATURE_HEADER] == expected == sign_body("k3y", body)
    assert body == webhook_body(n)
    assert b"content" not in body
    assert d.notifications[n.notification_id].delivery_state is DeliveryState.DELIVERED


def test_webhook_500_five_times_fails_with_backoff():
    t = RecordingTransport(500)
    d, sleeps = _dispatcher(t)
    n = _n(sub="hook")
    att = d.deliver(n)
    history = d.attempts[n.notification_id]
    assert [a.attempt_number for a in history] == [1, 2, 3, 4, 5]
    assert all(a.outcome is Outcome.RETRYABLE_FAILURE for a in history)
    assert sleeps == [1.0, 2.0, 4.0, 8.0]
    assert att is history[-1]
    assert d.notifications[n.notification_id].delivery_state is DeliveryState.FAILED


def test_timeouts_are_retryable_then_success():
    t = RecordingTransport(TimeoutError("slow"), 503, 200)
    d, sleeps = _dispatcher(t)
    att = d.deliver(_n(sub="hook"))
    assert att.outcome is Outcome.SUCCESS and att.attempt_number == 3 and sleeps == [1.0, 2.0]


@pytest.mark.parametrize("status", [400, 404, 410])
def test_4xx_is_permanent(status):
    t = RecordingTransport(status)
    d, _ = _dispatcher(t)
    att = d.deliver(_n(sub="hook"))
    assert att.outcome is Outcome.PERMANENT_FAILURE and len(t.calls) == 1


def test_dns_rebinding_caught_at_delivery():
    answers = iter([["93.184.216.34"], ["127.0.0.1"]])
    t = RecordingTransport(500, 200)
    d, _ = _dispatcher(t, resolver=lambda h: next(answers))
    att = d.deliver(_n(sub="hook"))
    assert att.outcome is Outcome.PERMANENT_FAILURE and "target rejected" in att.detail
    assert len(t.calls) == 1


def test_retry_policy_delays():
    assert [RetryPolicy().delay(k) for k in range(1, 5)] == [1.0, 2.0, 4.0, 8.0]


def test_recheck_blocks_dispatch():
    t = RecordingTransport(200)
    d, _ = _dispatcher(t, recheck=lambda n: False)
    att = d.deliver(_n(sub="hook"))
    assert att.outcome is Outcome.PERMANENT_FAILURE and t.calls == []
    att = d.deliver(_n(2))
    assert d.poll_notifications("a1") == []


def test_poll_pagination_contract():
    d, _ = _dispatcher()
    for seq in (1, 2, 3):
        d.deliver(_n(seq))
    assert d.poll_notifications("a2") == []
    first = d.poll_notifications("a1", 0, 2)
    assert [n.sequence for n in first] == [1, 2]
    assert [n.sequence for n in d.poll_notifications("a1", first[-1].sequence, 2)] == [3]
    assert d.poll_notifications("a1", 99) == []
    assert d.poll_notifications("a1", 0, 2) == first  # reads do not consume


def test_poll_unknown_agent():
    d, _ = _dispatcher()
    with pytest.raises(NotFound):
        d.poll_notifications("nobody")


def test_ack_rules():
    d, _ = _dispatcher()
    d.deliver(_n(1))
    d.deliver(_n(2, "a2", "s2"))
    assert d.ack("a1", ["n-00000001"]) == 1
    assert d.ack("a1", ["n-00000001"]) == 0
    with pytest.raises(AuthorizationError):
        d.ack("a1", ["n-00000002"])
    with pytest.raises(AuthorizationError):
        d.ack("a1", ["n-99999999"])
    assert d.poll_notifications("a1") == []
    assert [n.delivery_state for n in d.poll_notifications("a1", include_acked=True)] == [DeliveryState.ACKED]


def test_agent_isolation_randomized(rng):
    d, _ = _dispatcher()
    owners = {}
    for seq in range(1, 201):
        a = "a1" if rng.random() < 0.5 else "a2"
        d.deliver(_n(seq, a, "s1" if a == "a1" else "s2"))
        owners[seq] = a
    for a in ("a1", "a2"):
        got = d.poll_notifications(a, 0, 1000)
        assert all(n.agent_id == a for n in got)
        assert [n.sequence for n in got] == sorted(s for s, o in owners.items() if o == a)


def test_webhook_body_is_canonical_text():
    rec = codec.parse_records(webhook_body(_n()).decode())
    assert rec[0][0] == "WebhookNotification" and rec[0][1]["similarity"] == "0.9"
