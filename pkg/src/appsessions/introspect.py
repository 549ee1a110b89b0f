"""Explaining the linear model: session-type contributions and per-subject top sessions."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classifier
from .clustering import nearest_app_to_centroid
from .evaluation import (EvaluationReport, FoldArtifacts, FoldModel, HyperGrid, PipelineConfig,
                         _tables, build_fold, fit_final, inner_select)
from .features import CohortTables, Rescaler
from .sessionizer import Session

SESSION_VARIANTS = ("full", "B2")


class IntrospectError(ValueError):
    pass


@dataclass(frozen=True)
class TypeContribution:
    session_type_id: int
    weight: float
    feature_sum: float
    contribution: float
    nearest_app: str
    most_common_session: tuple[str, ...]
    delta_apps: tuple[str, ...]
    app_distribution_delta: np.ndarray

    def as_dict(self) -> dict:
        return {"session_type_id": self.session_type_id, "weight": self.weight,
                "feature_sum": self.feature_sum, "contribution": self.contribution,
                "nearest_app": self.nearest_app,
                "most_common_session": list(self.most_common_session),
                "app_distribution_delta": dict(zip(self.delta_apps,
                                                   map(float, self.app_distribution_delta)))}


@dataclass(frozen=True)
class SessionContribution:
    subject_id: str
    session: Session
    session_type_id: int
    contribution: float


@dataclass
class FittedPipeline:
    """Full-model pipeline fit on every subject of ``tables`` (no held-out subject)."""

    tables: CohortTables
    K: int
    C: float
    artifacts: FoldArtifacts
    rescaler: Rescaler
    fit: classifier.FitResult
    inner_scores: dict = field(default_factory=dict)

    @property
    def features(self) -> np.ndarray:
        """Rescaled feature matrix of all subjects."""
        return self.artifacts.matrices[self.K] / self.rescaler.factors

    def fold_model(self) -> FoldModel:
        return FoldModel("*", self.K, self.C, self.rescaler, self.fit, self.artifacts)


def fit_all_subjects(cohort_or_tables, grid: HyperGrid = HyperGrid(),
                     cfg: PipelineConfig = PipelineConfig(), seed: int = 0,
                     variant: str = "full") -> FittedPipeline:
    """Fit artifacts on all subjects, pick (K, C) by LOO over them, then fit the classifier."""
    if variant not in SESSION_VARIANTS:
        raise IntrospectError(f"introspection needs a session-type variant, got {variant!r}")
    tables = _tables(cohort_or_tables, cfg)
    rows = list(range(len(tables)))
    art = build_fold(tables, variant, grid.Ks, rows, cfg, seed, "all")
    sel = inner_select(tables, rows, grid, variant, cfg, seed, "all", outer=art)
    resc, res = fit_final(art.matrices[sel.K], tables.y, sel.C, cfg)
    return FittedPipeline(tables, sel.K, sel.C, art, resc, res, sel.scores)


def _session_types(tables: CohortTables, art: FoldArtifacts, K: int, row: int) -> np.ndarray:
    if art.variant not in SESSION_VARIANTS:
        raise IntrospectError(f"variant {art.variant} has no session types")
    return art.slots[K][tables.session_keys[row]]


def _top_apps(sessions: Sequence[Session], top_m: int) -> list[str]:
    counts = Counter(a for s in sessions for a in s.apps)
    return [a for a, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_m]]


def app_distribution_delta(type_sessions: Sequence[Session], all_sessions: Sequence[Session],
                           top_m: int = 15) -> tuple[list[str], np.ndarray]:
    """Per-app open share inside one session type minus the share over all sessions.

    Evaluated on the ``top_m`` apps most opened across ``all_sessions``
    (ties by name); apps the type never opens get ``-q_app``.
    """
    if not type_sessions:
        raise IntrospectError("session type has no sessions")
    if not all_sessions:
        raise IntrospectError("no sessions")
    apps = _top_apps(all_sessions, top_m)
    p = Counter(a for s in type_sessions for a in s.apps)
    q = Counter(a for s in all_sessions for a in s.apps)
    np_, nq = sum(p.values()), sum(q.values())
    return apps, np.array([p[a] / np_ - q[a] / nq for a in apps])


def most_common_session(sessions: Sequence[Session]) -> tuple[str, ...]:
    """Modal app multiset (order ignored); ties go to the smallest ``+``-joined form."""
    counts = Counter(tuple(sorted(s.apps)) for s in sessions)
    top = max(counts.values())
    return min((k for k, c in counts.items() if c == top), key=lambda k: "+".join(k))


def type_contributions(pipeline: FittedPipeline, top_m: int = 15) -> list[TypeContribution]:
    """Weight times the summed rescaled feature, for every session type."""
    tables, art, K = pipeline.tables, pipeline.artifacts, pipeline.K
    X = pipeline.features
    w = pipeline.fit.weights
    feature_sum = X.sum(axis=0)
    by_type: list[list[Session]] = [[] for _ in range(K)]
    all_sessions = []
    for row in range(len(tables)):
        types = _session_types(tables, art, K, row)
        for s, k in zip(tables.sessions[row], types):
            all_sessions.append(s)
            if k >= 0:
                by_type[k].append(s)
    model = art.type_models[K]
    out = []
    for k in range(K):
        if by_type[k]:
            apps, delta = app_distribution_delta(by_type[k], all_sessions, top_m)
            modal = most_common_session(by_type[k])
        else:
            apps, delta, modal = [], np.zeros(0), ()
        out.append(TypeContribution(k, float(w[k]), float(feature_sum[k]),
                                    float(w[k] * feature_sum[k]),
                                    nearest_app_to_centroid(model, art.embedding, k),
                                    modal, tuple(apps), delta))
    return out


def rank_type_contributions(pipeline: FittedPipeline | None, top_n: int = 4, top_m: int = 15):
    """The ``top_n`` most positive (toward symptomatic) and most negative session types.

    Types with zero contribution are in neither list.
    """
    if pipeline is None or pipeline.fit is None:
        raise IntrospectError("pipeline is not fitted")
    contribs = type_contributions(pipeline, top_m)
    pos = sorted((c for c in contribs if c.contribution > 0), key=lambda c: -c.contribution)
    neg = sorted((c for c in contribs if c.contribution < 0), key=lambda c: c.contribution)
    return pos[:top_n], neg[:top_n]


def session_contributions(tables: CohortTables, model: FoldModel, row: int) -> list[SessionContribution]:
    """Contribution of every non-dropped session of one subject to w.x.

    One session of type k adds ``1 / days`` to raw feature k, hence
    ``w_k / (days * factor_k)`` to the decision value.
    """
    types = _session_types(tables, model.artifacts, model.K, row)
    w, f = model.fit.weights, model.rescaler.factors
    days = tables.days[row]
    sid = tables.subject_ids[row]
    return [SessionContribution(sid, s, int(k), float(w[k] / (days * f[k])))
            for s, k in zip(tables.sessions[row], types) if k >= 0]


def subject_score(tables: CohortTables, model: FoldModel, row: int) -> tuple[float, float]:
    """(w.x, probability) for one subject under ``model``."""
    x = model.artifacts.matrices[model.K][row] / model.rescaler.factors
    return float(x @ model.fit.weights), float(classifier.predict_proba(model.fit, x))


def per_subject_top_sessions(tables: CohortTables, model: FoldModel, row: int, n: int = 3):
    """The ``n`` sessions pushing hardest toward the subject's predicted side.

    Subjects predicted symptomatic (probability >= 0.5) get their most
    positive sessions, others their most negative; ties go to the earlier
    session. Returns ``(sessions, flagged)`` where ``flagged`` marks
    subjects with fewer than ``n`` sessions.
    """
    contribs = session_contributions(tables, model, row)
    _, prob = subject_score(tables, model, row)
    sign = -1.0 if prob >= 0.5 else 1.0
    ranked = sorted(contribs, key=lambda c: (sign * c.contribution, c.session.start_ts))
    return ranked[:n], len(contribs) < n


def extreme_subjects(report: EvaluationReport, per_group: int = 5) -> dict:
    """Subjects grouped by (label, high/low score), most extreme predictions first."""
    groups = {}
    for label in (1, 0):
        entries = [e for e in report.per_subject if e["label"] == label]
        high = sorted((e for e in entries if e["prob"] >= 0.5), key=lambda e: (-e["prob"], e["subject"]))
        low = sorted((e for e in entries if e["prob"] < 0.5), key=lambda e: (e["prob"], e["subject"]))
        name = "symptomatic" if label else "healthy"
        groups[(name, "high")] = [e["subject"] for e in high[:per_group]]
        groups[(name, "low")] = [e["subject"] for e in low[:per_group]]
    return groups


def explain_loo(report: EvaluationReport, tables: CohortTables, n: int = 3, per_group: int = 5) -> list[dict]:
    if not report.fold_models:
        raise IntrospectError("report has no fold models; run outer_loo with keep_models=True")
    models = {m.subject_id: m for m in report.fold_models}
    rows = {sid: i for i, sid in enumerate(tables.subject_ids)}
    out = []
    for (label, side), subjects in extreme_subjects(report, per_group).items():
        for sid in subjects:
            model = models[sid]
            top, flagged = per_subject_top_sessions(tables, model, rows[sid], n)
            score, prob = subject_score(tables, model, rows[sid])
            out.append({"subject": sid, "label": label, "score_side": side, "prob": prob,
                        "log_odds": score + model.fit.intercept, "flagged": flagged,
                        "sessions": [{"start_ts": c.session.start_ts, "apps": list(c.session.apps),
                                      "session_type": c.session_type_id,
                                      "contribution": c.contribution} for c in top]})
    return out


def write_type_report(out_dir, pipeline: FittedPipeline, top_n: int = 4, top_m: int = 15) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pos, neg = rank_type_contributions(pipeline, top_n, top_m)
    doc = {"K": pipeline.K, "C": pipeline.C, "intercept": pipeline.fit.intercept,
           "toward_symptomatic": [c.as_dict() for c in pos],
           "toward_healthy": [c.as_dict() for c in neg]}
    (out / "session_types.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    with open(out / "session_types.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["direction", "session_type", "weight", "feature_sum", "contribution",
                    "nearest_app", "most_common_session"])
        for direction, items in (("symptomatic", pos), ("healthy", neg)):
            for c in items:
                w.writerow([direction, c.session_type_id, repr(c.weight), repr(c.feature_sum),
                            repr(c.contribution), c.nearest_app, "+".join(c.most_common_session)])
    with open(out / "app_deltas.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_type", "app", "delta"])
        for c in pos + neg:
            for app, d in zip(c.delta_apps, c.app_distribution_delta):
                w.writerow([c.session_type_id, app, repr(float(d))])
    return {"json": str(out / "session_types.json"), "csv": str(out / "session_types.csv"),
            "deltas": str(out / "app_deltas.csv")}


def write_subject_report(out_dir, report: EvaluationReport, tables: CohortTables, n: int = 3,
                         per_group: int = 5) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = explain_loo(report, tables, n, per_group)
    (out / "subject_sessions.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
    with open(out / "subject_sessions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "label", "score_side", "prob", "rank", "apps", "session_type",
                    "contribution"])
        for r in rows:
            for rank, s in enumerate(r["sessions"], start=1):
                w.writerow([r["subject"], r["label"], r["score_side"], repr(r["prob"]), rank,
                            "+".join(s["apps"]), s["session_type"], repr(s["contribution"])])
    return {"json": str(out / "subject_sessions.json"), "csv": str(out / "subject_sessions.csv")}
