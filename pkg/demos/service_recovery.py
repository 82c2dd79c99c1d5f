"""
Crash recovery from the event log
=================================

The service journals every mutation before matching sees it. Rebuilding
from the log reproduces the same notifications, even when the last write
was torn by a crash.
"""

# %%
import shutil
import tempfile
from pathlib import Path

from govsub.bench import ScenarioConfig, generate_scenario
from govsub.service import ADMIN, EventLog, Service, ServiceConfig, recover

scenario = generate_scenario(ScenarioConfig(seed=7, n_chunks=120, n_agents=10))
workdir = Path(tempfile.mkdtemp())
log_path = workdir / "events.log"
config = ServiceConfig(embedding_dim=scenario.config.embedding_dim, admin_token="admin", log_path=str(log_path))
svc = Service(config, event_log=EventLog(log_path))

# %%
# Drive the service through a scenario: agents, subscriptions, then
# chunks that are submitted and mostly activated.
for a in scenario.agents:
    svc.register_agent(a)
for s in scenario.subscriptions:
    svc.create_subscription(s.agent_id, s.query_embedding, s.similarity_threshold)
by_id = {c.chunk_id: c for c in scenario.chunks}
for ev in scenario.schedule(hold_back=True):
    c = by_id[ev.chunk_id]
    if ev.kind.value == "create":
        svc.submit_chunk(c.contributor_id, c.content, c.embedding, c.policy, chunk_id=c.chunk_id)
    else:
        svc.transition_chunk(ADMIN, c.chunk_id, "active")
before = svc.engine.state_digest()
print(len(svc.engine.notifications), "notifications before the crash")

# %%
# Simulate the crash: copy the log while the process is still running and
# append half a record.
crashed = workdir / "crashed.log"
shutil.copyfile(log_path, crashed)
with open(crashed, "ab") as fh:
    fh.write(b"REC 99999 chunk_create 400 00000000\n@Chu")
svc.log.close()

restored, report = recover(ServiceConfig(**{**vars(config), "log_path": str(crashed)}))
print(report)
print("state identical:", restored.engine.state_digest() == before)
restored.log.close()
