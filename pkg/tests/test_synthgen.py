import json

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from appsessions.ingest import load_cohort
from appsessions.sessionizer import sessionize_with_stats
from appsessions.synthgen import (CROSSED_PAIRS, GeneratorConfig, GeneratorError, config_from_dict,
                                  generate, scenario, with_seed)


def small(name="E1_strong_cooccurrence", seed=0, **kw):
    base = scenario(name, seed)
    return config_from_dict({**_as_dict(base), "n_healthy": 12, "n_symptomatic": 10, "days": 14, **kw})


def _as_dict(cfg):
    from appsessions.synthgen import _config_dict
    return _config_dict(cfg)


def test_same_seed_same_files(tmp_path):
    a = generate(small(seed=3)).write(tmp_path / "a")
    b = generate(small(seed=3)).write(tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read(), key


def test_seed_changes_cohort():
    a = generate(small(seed=1)).cohort
    b = generate(small(seed=2)).cohort
    assert a.subjects[0].app_events != b.subjects[0].app_events


def test_class_sizes_and_days():
    syn = generate(small())
    labels = [s.label for s in syn.cohort.subjects]
    assert labels.count("healthy") == 12 and labels.count("symptomatic") == 10
    assert all(s.days_observed == 14.0 for s in syn.cohort.subjects)


def test_sessionizer_recovers_planted_sessions():
    syn = generate(small())
    for subj in syn.cohort.subjects:
        sessions, stats = sessionize_with_stats(subj)
        truth = syn.truth[subj.subject_id]["sessions"]
        assert len(sessions) == len(truth)
        assert stats.dropped_opens == 0 and stats.unpaired_locks == 0
        assert stats.empty_sessions == 0


def test_template_sessions_contain_core_apps():
    syn = generate(small())
    cores, _ = syn.config.templates()
    for subj in syn.cohort.subjects:
        sessions, _ = sessionize_with_stats(subj)
        for s, t in zip(sessions, syn.truth[subj.subject_id]["sessions"]):
            if t >= 0:
                assert set(cores[t]) <= set(s.apps)


def test_written_cohort_round_trips(tmp_path):
    syn = generate(small())
    p = syn.write(tmp_path)
    back = load_cohort(p["events"], p["labels"], p["category_map"])
    assert back.subjects == syn.cohort.subjects
    sidecar = json.loads(open(p["truth"]).read())
    assert set(sidecar["subjects"]) == {s.subject_id for s in back.subjects}


def _template_table(syn):
    cores, _ = syn.config.templates()
    table = np.zeros((2, len(cores)))
    for sid, t in syn.truth.items():
        row = 1 if t["label"] == "symptomatic" else 0
        for k in t["sessions"]:
            if k >= 0:
                table[row, k] += 1
    return table


def test_null_scenario_templates_independent_of_label():
    # preference jitter makes subjects overdispersed, so this is loose on purpose
    p = chi2_contingency(_template_table(generate(scenario("E2_null", 0))))[1]
    assert p > 1e-3


def test_planted_scenario_templates_depend_on_label():
    p = chi2_contingency(_template_table(generate(scenario("E1_strong_cooccurrence", 0))))[1]
    assert p < 1e-12


def test_crossed_pairs_are_marginal_matched():
    cores, mix = GeneratorConfig(session_templates=CROSSED_PAIRS, cooccurrence_signal=1.0).templates()
    for app in {a for c in cores for a in c}:
        per = [sum(w for c, w in zip(cores, mix[lab]) if app in c) for lab in ("healthy", "symptomatic")]
        assert per[0] == pytest.approx(per[1], abs=1e-12)


def test_unmatched_templates_rejected():
    temps = {"symptomatic": ((("Messages", "Mail"), 1.0),), "healthy": ((("Safari", "Phone"), 1.0),)}
    with pytest.raises(GeneratorError, match="marginal"):
        GeneratorConfig(session_templates=temps, cooccurrence_signal=1.0).validate()
    GeneratorConfig(session_templates=temps, cooccurrence_signal=1.0, marginal_matched=False).validate()


def test_tilt_conflicts_with_matching():
    with pytest.raises(GeneratorError):
        GeneratorConfig(session_templates=CROSSED_PAIRS,
                        app_tilt={"symptomatic": {"Phone": 2.0}}).validate()


def test_marginal_only_scenario_tilts_apps():
    syn = generate(scenario("E3_marginal_only", 0))
    share = {}
    for subj in syn.cohort.subjects:
        opens = [e.app_id for e in subj.app_events if e.kind == "open"]
        share.setdefault(subj.label, []).append(sum(a in ("Phone", "Clock", "Calendar") for a in opens) / len(opens))
    assert np.mean(share["symptomatic"]) > 1.5 * np.mean(share["healthy"])


@pytest.mark.parametrize("bad", [
    {"days": 0}, {"cooccurrence_signal": 1.5}, {"template_share": -0.1}, {"n_healthy": -1},
])
def test_invalid_configs(bad):
    with pytest.raises(GeneratorError):
        config_from_dict({**_as_dict(scenario("E2_null")), **bad}).validate()


def test_unknown_keys_and_scenarios():
    with pytest.raises(GeneratorError, match="unknown"):
        config_from_dict({"n_subjects": 3})
    with pytest.raises(GeneratorError, match="unknown scenario"):
        scenario("E9")


def test_infeasible_layout():
    with pytest.raises(GeneratorError, match="cannot fit"):
        generate(GeneratorConfig(n_healthy=1, n_symptomatic=1, days=1, sessions_per_day=5000, template_share=0.0,
                                 volume_shape=0, seed=0))


def test_with_seed():
    assert with_seed(scenario("E2_null", 0), 7).seed == 7
