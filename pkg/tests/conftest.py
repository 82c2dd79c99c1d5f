import itertools

import numpy as np
import pytest

from govsub.model import ALL, AgentProfile, PolicyProfile
from govsub.vectors import normalize


def unit(*components, dim=8):
    v = np.zeros(dim)
    v[: len(components)] = components
    return normalize(v)


def agent(agent_id="a1", level=3, purpose="scientific", training=False, jur="EU"):
    return AgentProfile(agent_id, level, purpose, training, jur)


def policy(level=1, dm=False, train=False, sci=False, jur=ALL):
    return PolicyProfile(level, dm, train, sci, jur)


class FakeClock:
    def __init__(self, start=1000.0):
        self.t = start

    def __call__(self):
        self.t += 1.0
        return self.t


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def public_resolver(host):
    return ["93.184.216.34"]


class RecordingTransport:
    """Fake HTTP POST that replays a scripted list of status codes (or exceptions)."""

    def __init__(self, *responses):
        self.responses = itertools.chain(responses, itertools.repeat(responses[-1] if responses else 200))
        self.calls = []

    def __call__(self, url, body, headers, timeout):
        self.calls.append((url, body, dict(headers)))
        r = next(self.responses)
        if isinstance(r, BaseException):
            raise r
        return r


# -- acceptance reporting -----------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            _CRITERIA[self.number] = (self.title, True, self.detail)
        else:
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            _CRITERIA[self.number] = (self.title, False, f"{self.detail} | {msg}".strip(" |"))
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c: ...`` records a pass/fail line for the summary."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
