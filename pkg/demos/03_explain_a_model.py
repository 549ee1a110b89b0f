"""
Reading the fitted model
========================

Which session types push toward "symptomatic", what those sessions look
like, and which sessions drove one subject's prediction.
"""

from dataclasses import replace

from appsessions.embedding import EmbeddingConfig
from appsessions.evaluation import HyperGrid, PipelineConfig, outer_loo
from appsessions.features import build_tables
from appsessions.introspect import fit_all_subjects, per_subject_top_sessions, rank_type_contributions
from appsessions.synthgen import generate, scenario

cfg = replace(scenario("E1_strong_cooccurrence", seed=2), n_healthy=16, n_symptomatic=10, days=28)
tables = build_tables(generate(cfg).cohort)
grid = HyperGrid(Ks=(4, 8), Cs=(0.3, 1.0, 3.0))
pipe = PipelineConfig(embedding=EmbeddingConfig(epochs=8))

model = fit_all_subjects(tables, grid, pipe, seed=2)
print(f"K={model.K} C={model.C}")
toward_sym, toward_healthy = rank_type_contributions(model, top_n=3)
for title, items in (("toward symptomatic", toward_sym), ("toward healthy", toward_healthy)):
    print(title)
    for c in items:
        top = sorted(zip(c.delta_apps, c.app_distribution_delta), key=lambda t: -t[1])[:3]
        print(f"  type {c.session_type_id}: {c.contribution:+.2f}  modal session "
              f"{'+'.join(c.most_common_session)}  over-represented {[a for a, _ in top]}")

# per-subject view uses the leave-one-out model that never saw the subject
report = outer_loo(tables, "full", grid, pipe, seed=2, keep_models=True)
print("held-out AUROC", round(report.auroc, 3))
# the most confidently symptomatic subject among the truly symptomatic ones
sym = [j for j, e in enumerate(report.per_subject) if e["label"] == 1]
i = max(sym, key=lambda j: report.per_subject[j]["prob"])
fold = report.fold_models[i]
row = tables.subject_ids.index(fold.subject_id)
sessions, flagged = per_subject_top_sessions(tables, fold, row, n=3)
print(fold.subject_id, report.per_subject[i]["label"], "prob", round(report.per_subject[i]["prob"], 3))
for c in sessions:
    print(f"  {'+'.join(c.session.apps):<30} type {c.session_type_id}  {c.contribution:+.4f}")
