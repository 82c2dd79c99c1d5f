"""
Governed matching in a few lines
================================

Two agents watch the same topic. One is a marketing agent cleared for
level 3 data, the other a scientific agent cleared for level 5. A chunk
arrives that is both sensitive and opted out of marketing. Only one of
them should hear about it.
"""

# %%
# Setup: a small embedding space with a single shared topic direction.
import numpy as np

from govsub import AgentProfile, Engine, EngineConfig, normalize

dim = 16
topic = np.zeros(dim)
topic[0] = 1.0

engine = Engine(EngineConfig(embedding_dim=dim))
engine.register_agent(AgentProfile("ads-bot", 3, "marketing", False, "EU"))
engine.register_agent(AgentProfile("lab-bot", 5, "scientific", False, "EU"))
for agent_id in ("ads-bot", "lab-bot"):
    engine.create_subscription(agent_id, topic, threshold=0.8)

# %%
# A level-4 chunk with a marketing opt-out, written straight to active.
# Omitted fields are filled pessimistically: the missing training opt-out
# becomes True and the jurisdiction falls back to the contributor's.
chunk, _ = engine.submit_chunk(
    "trial cohort outcomes",
    normalize(topic + 0.05 * np.eye(dim)[1]),
    {"sensitivity_level": 4, "marketing_opt_out": True, "scientific_opt_out": False},
    "lab-bot",
)
print(chunk.policy)
event, notes = engine.transition_chunk(chunk.chunk_id, "active")
print([(n.agent_id, round(n.similarity, 4)) for n in notes])

# %%
# The same subscriptions without governance would have notified both.
open_engine = Engine(EngineConfig(embedding_dim=dim, governed=False))
for a in engine.agents.values():
    open_engine.register_agent(a)
    open_engine.create_subscription(a.agent_id, topic, threshold=0.8)
c, _ = open_engine.submit_chunk("trial cohort outcomes", chunk.embedding, chunk.policy, "lab-bot")
print([n.agent_id for n in open_engine.transition_chunk(c.chunk_id, "active")[1]])
