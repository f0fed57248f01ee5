"""
Pseudo-labels from LLM similarity ratings
==========================================

Correctness labels for predicted root causes come from repeatedly asking how
similar the prediction is to the confirmed root cause (1..3). Means at or
above a threshold count as correct. The threshold is fitted for F1 against a
small human-labelled set.
"""

from rcacalib.gateway import SimulatedBackend
from rcacalib.labels import fit_correctness_threshold, label_cases, rate_similarity
from rcacalib.simbench import generate_corpus, make_predictions, pipeline_script

corpus = generate_corpus(seed=5, n=40, topics=8)
cases = make_predictions(corpus, seed=6, accuracy=0.5)
backend = SimulatedBackend(pipeline_script(), seed=3)

ratings = [rate_similarity(c.incident.root_cause, c.predicted_root_cause, backend,
                           n_queries=2, n_per_query=32, case_id=c.case_id) for c in cases]
truth = [int(c.predicted_root_cause == c.incident.root_cause) for c in cases]

# Pretend the first 20 cases were annotated by people.
threshold, f1 = fit_correctness_threshold(
    (r.mean_rating, y) for r, y in zip(ratings[:20], truth[:20]))
print(f"fitted threshold {threshold:.3f} with F1 {f1:.3f}")

labels = label_cases(ratings[20:], threshold)
agree = sum(l.label == y for l, y in zip(labels, truth[20:]))
print(f"held-out agreement with the true labels: {agree}/{len(labels)}")

# The default cutoff 2.3 is inclusive, so a mean of exactly 2.3 counts as correct.
print("labels at 2.3:", [l.label for l in label_cases(ratings[:10], 2.3)])
