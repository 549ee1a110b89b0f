"""
From raw events to app embeddings
=================================

A small synthetic cohort, one subject's sessions, and what the CBOW
embedding learns about apps that tend to share a session.
"""

from dataclasses import replace

import numpy as np

from appsessions.embedding import EmbeddingConfig, train_cbow
from appsessions.sessionizer import corpus_of, sessionize_with_stats
from appsessions.synthgen import generate, scenario

# a scaled-down version of the planted co-occurrence scenario
cfg = replace(scenario("E1_strong_cooccurrence", seed=1), n_healthy=10, n_symptomatic=6, days=21)
cohort = generate(cfg).cohort
subject = cohort.subjects[0]
print(subject.subject_id, subject.label, len(subject.app_events), "app events")

# sessions are the app opens inside one unlock -> lock window
sessions, stats = sessionize_with_stats(subject)
for s in sessions[:5]:
    print(s.start_ts, " + ".join(s.apps))
print(stats.as_dict())

# one sentence per subject: every open in time order
corpora = [corpus_of(s) for s in cohort.subjects]
model = train_cbow(corpora, EmbeddingConfig(seed=1))
print("loss per epoch:", np.round(model.epoch_losses, 3))

unit = model.vectors / np.linalg.norm(model.vectors, axis=1, keepdims=True)


def cos(a, b):
    return float(unit[model.vocab.index[a]] @ unit[model.vocab.index[b]])


# CBOW pulls together apps seen in similar contexts; two apps that always
# share a session predict each other but need not end up close
for a, b in (("Messages", "Mail"), ("Safari", "Facebook"), ("Mail", "Facebook"), ("Messages", "Safari")):
    print(f"cos({a}, {b}) = {cos(a, b):+.2f}")

# what the session types use is the mean vector of a session; the four
# planted pairs land in clearly separated places
pairs = [("Messages", "Mail"), ("Safari", "Facebook"), ("Mail", "Facebook"), ("Messages", "Safari")]
means = np.array([model.vectors[[model.vocab.index[a] for a in p]].mean(axis=0) for p in pairs])
dist = np.linalg.norm(means[:, None] - means[None], axis=2)
print("distances between pair means:\n", np.round(dist, 2))
