"""
Retrieving historical incidents under a token budget
=====================================================

A new incident is embedded and compared with every historical incident by
inner product. References are then taken from the top of the ranking until
the next one would overflow the token budget L.
"""

from rcacalib.corpus import split_corpus, SplitSpec
from rcacalib.retrieval import MockEmbedder, Retriever
from rcacalib.simbench import generate_corpus

# A synthetic corpus: incidents of the same topic share wording, so they
# embed close together under the offline 3-gram embedder.
corpus = generate_corpus(seed=0, n=200, topics=6)
history, validation, test = split_corpus(corpus, SplitSpec(150, 25, 25, seed=1))

retriever = Retriever(history, MockEmbedder(dim=64), budget_L=3896)
query = test.incidents[0]
ctx = retriever.retrieve(query)

print("query:", query.description)
print(f"{ctx.k} references, {ctx.total_tokens} of {ctx.budget_L} tokens")
for ref in ctx.references[:3]:
    print("  -", ref.description, "=>", ref.root_cause)

# %%
# A tight budget keeps only the best-ranked prefix. With L=0 nothing fits and
# the prompt falls back to a fixed "no history" line.
small = Retriever(history, MockEmbedder(), budget_L=120).retrieve(query)
print(f"L=120 keeps {small.k} references ({small.total_tokens} tokens)")
print(Retriever(history, MockEmbedder(), budget_L=0).retrieve(query).render())
