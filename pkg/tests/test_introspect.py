import numpy as np
import pytest

from appsessions import introspect
from appsessions.classifier import FitResult
from appsessions.embedding import EmbeddingConfig
from appsessions.evaluation import HyperGrid, PipelineConfig, outer_loo
from appsessions.features import build_tables
from appsessions.introspect import (IntrospectError, app_distribution_delta, fit_all_subjects,
                                   most_common_session, per_subject_top_sessions,
                                   rank_type_contributions, session_contributions, subject_score)
from appsessions.sessionizer import Session
from appsessions.synthgen import CROSSED_PAIRS, GeneratorConfig, generate

GRID = HyperGrid(Ks=(3, 4), Cs=(0.3, 3.0))
CFG = PipelineConfig(embedding=EmbeddingConfig(epochs=3, dim=8))


def sess(*apps, t=0):
    return Session("s", t, t + 1, tuple(apps))


@pytest.fixture(scope="module")
def tables():
    cfg = GeneratorConfig(n_healthy=7, n_symptomatic=6, days=6, session_templates=CROSSED_PAIRS,
                          cooccurrence_signal=0.8, seed=4)
    return build_tables(generate(cfg).cohort)


@pytest.fixture(scope="module")
def report(tables):
    return outer_loo(tables, "full", GRID, CFG, seed=2, keep_models=True)


@pytest.fixture(scope="module")
def pipeline(tables):
    return fit_all_subjects(tables, GRID, CFG, seed=2)


def test_session_contributions_sum_to_decision_value(report, tables):
    for m in report.fold_models:
        row = tables.subject_ids.index(m.subject_id)
        total = sum(c.contribution for c in session_contributions(tables, m, row))
        wx, _ = subject_score(tables, m, row)
        assert total == pytest.approx(wx, abs=1e-9)


def test_top_sessions_follow_predicted_side(report, tables):
    for m in report.fold_models:
        row = tables.subject_ids.index(m.subject_id)
        top, flagged = per_subject_top_sessions(tables, m, row, n=3)
        allc = session_contributions(tables, m, row)
        _, prob = subject_score(tables, m, row)
        vals = [c.contribution for c in top]
        if prob >= 0.5:
            assert vals == sorted(vals, reverse=True) and vals[0] == max(c.contribution for c in allc)
        else:
            assert vals == sorted(vals) and vals[0] == min(c.contribution for c in allc)
        assert flagged == (len(allc) < 3)


def test_top_sessions_ties_go_to_earlier_session(report, tables):
    m = report.fold_models[0]
    row = tables.subject_ids.index(m.subject_id)
    top, _ = per_subject_top_sessions(tables, m, row, n=10**6)
    for a, b in zip(top, top[1:]):
        if a.contribution == b.contribution:
            assert a.session.start_ts <= b.session.start_ts


def test_flag_when_fewer_sessions(report, tables):
    m = report.fold_models[0]
    row = tables.subject_ids.index(m.subject_id)
    n_all = len(session_contributions(tables, m, row))
    top, flagged = per_subject_top_sessions(tables, m, row, n=n_all + 1)
    assert flagged and len(top) == n_all


def test_app_distribution_delta_by_hand():
    type_s = [sess("A", "B"), sess("A")]
    all_s = type_s + [sess("C"), sess("C", "C", "B")]
    apps, d = app_distribution_delta(type_s, all_s, top_m=3)
    assert apps == ["C", "A", "B"]  # C:3, then A:2 and B:2 by name
    assert d == pytest.approx([0 - 3 / 7, 2 / 3 - 2 / 7, 1 / 3 - 2 / 7])


def test_app_distribution_delta_sums_to_zero_over_all_apps(tables):
    everything = [s for row in tables.sessions for s in row]
    _, d = app_distribution_delta(everything[:50], everything, top_m=10**6)
    assert d.sum() == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(IntrospectError):
        app_distribution_delta([], everything)


def test_most_common_session_ignores_order_and_breaks_ties_by_name():
    assert most_common_session([sess("B", "A"), sess("A", "B"), sess("C")]) == ("A", "B")
    assert most_common_session([sess("C"), sess("B", "A")]) == ("A", "B")


def test_rank_type_contributions_signs_and_order(pipeline):
    pos, neg = rank_type_contributions(pipeline, top_n=2)
    assert len(pos) <= 2 and len(neg) <= 2
    assert all(c.contribution > 0 for c in pos) and all(c.contribution < 0 for c in neg)
    assert [c.contribution for c in pos] == sorted((c.contribution for c in pos), reverse=True)
    for c in pos + neg:
        assert c.contribution == pytest.approx(c.weight * c.feature_sum)
        assert c.nearest_app in pipeline.artifacts.embedding.vocab.apps


def test_zero_weight_types_excluded(pipeline):
    w = np.zeros_like(pipeline.fit.weights)
    w[0] = 1.0
    zeroed = introspect.FittedPipeline(pipeline.tables, pipeline.K, pipeline.C, pipeline.artifacts,
                                       pipeline.rescaler, FitResult(w, 0.0, 1.0, 0.0, 1, True))
    pos, neg = rank_type_contributions(zeroed, top_n=10)
    assert [c.session_type_id for c in pos] == [0] and neg == []


def test_unfitted_pipeline_rejected():
    with pytest.raises(IntrospectError):
        rank_type_contributions(None)


def test_non_session_variant_rejected(tables):
    with pytest.raises(IntrospectError):
        fit_all_subjects(tables, GRID, CFG, variant="B5")


def test_reports_written(pipeline, report, tables, tmp_path):
    p = introspect.write_type_report(tmp_path, pipeline, top_n=2)
    s = introspect.write_subject_report(tmp_path, report, tables, n=2, per_group=2)
    for path in list(p.values()) + list(s.values()):
        assert open(path).read()
    groups = introspect.extreme_subjects(report, per_group=2)
    assert set(groups) == {(a, b) for a in ("symptomatic", "healthy") for b in ("high", "low")}
