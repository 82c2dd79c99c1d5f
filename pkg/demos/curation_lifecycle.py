"""
Proposed versus validated knowledge
===================================

Subscriptions choose whether they hear about chunks under review, chunks
that have been validated, or both. A chunk is announced at most once per
subscription and trigger.
"""

# %%
import numpy as np

from govsub import ALL, AgentProfile, Engine, EngineConfig

dim = 8
q = np.eye(dim)[0]
engine = Engine(EngineConfig(embedding_dim=dim))
engine.register_agent(AgentProfile("reviewer", 5, "scientific", False, "EU"))
engine.register_agent(AgentProfile("consumer", 5, "scientific", False, "EU"))
review = engine.create_subscription("reviewer", q, 0.9, trigger_status="proposed")
stable = engine.create_subscription("consumer", q, 0.9, trigger_status="active")

# %%
# Submission only reaches the reviewer. The policy is declared in full;
# any omitted opt-out would default to True and silence scientific agents.
open_policy = {
    "sensitivity_level": 1,
    "marketing_opt_out": False,
    "training_opt_out": False,
    "scientific_opt_out": False,
    "allowed_jurisdictions": ALL,
}
chunk, created = engine.submit_chunk("draft finding", q, open_policy, "reviewer")
print("on submit:", [n.agent_id for n in created])

# %%
# Activation reaches the consumer. The reviewer is not told again.
_, activated = engine.transition_chunk(chunk.chunk_id, "active")
print("on activate:", [n.agent_id for n in activated])

# %%
# Superseding is terminal and never triggers anything.
_, superseded = engine.transition_chunk(chunk.chunk_id, "superseded")
print("on supersede:", superseded)
print("consumer queue:", [n.chunk_id for n in engine.poll("consumer")])
