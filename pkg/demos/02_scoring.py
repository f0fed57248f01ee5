"""
Confidence-of-evaluation and root-cause-evaluation scores
==========================================================

Both phases first sample k1 analyses of the retrieved evidence, then k2
answers per analysis. COE answers are (A) Yes / (B) No votes on whether the
history is enough to judge the incident; RCE answers are 1..5 ratings of the
candidate root cause. Here an offline simulated backend plays the LLM.
"""

import numpy as np

from rcacalib.gateway import SimulatedBackend
from rcacalib.pace import QueryCase, SamplingConfig, score_case
from rcacalib.retrieval import MockEmbedder, Retriever
from rcacalib.simbench import generate_corpus, pipeline_script

corpus = generate_corpus(seed=2, n=60, topics=4)
history, queries = corpus.incidents[:50], corpus.incidents[50:]
retriever = Retriever(type(corpus)(history), MockEmbedder())

# The simulated backend answers by regex on the prompt. This script votes Yes
# more often when references exist and rates a candidate higher when it
# appears among the references' root causes.
backend = SimulatedBackend(pipeline_script(), seed=11)
cfg = SamplingConfig(k1=4, k2=8, k1p=4, k2p=8)

query = queries[0]
right = QueryCase(query, query.root_cause, "oracle")
wrong = QueryCase(query, "certificate expired on the load balancer", "guess")
ctx = retriever.retrieve(query)

for case in (right, wrong):
    rec = score_case(case, ctx, cfg, backend, mode="full")
    print(f"{case.predictor_id:>6}: E(c)={rec.coe_mean:.3f}  E(s)={rec.rce_mean:.3f}  "
          f"votes {np.asarray(rec.coe_votes).shape}, scores {np.asarray(rec.rce_scores).shape}")

# %%
# Ablations: without context every prompt sees the "no history" line, and
# without analysis each phase is a single batch of k2 answers.
for mode in ("no-context", "no-analysis"):
    rec = score_case(right, ctx, cfg, backend, mode=mode)
    print(f"{mode:>11}: E(c)={rec.coe_mean:.3f}  E(s)={rec.rce_mean:.3f}  "
          f"analyses={len(rec.analyses)}")
print("backend requests so far:", backend.calls)
