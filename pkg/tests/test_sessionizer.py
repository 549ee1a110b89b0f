import numpy as np
from hypothesis import given, settings, strategies as st

from appsessions.ingest import AppEvent, LockEvent, make_subject
from appsessions.sessionizer import corpus_of, sessionize, sessionize_with_stats
from conftest import subject_from


def brute_force_sessions(subject):
    """Reference: enumerate windows, then test every open against every window."""
    windows, start = [], None
    for ev in subject.lock_events:
        if ev.kind == "unlock" and start is None:
            start = ev.ts
        elif ev.kind == "lock" and start is not None:
            windows.append((start, ev.ts))
            start = None
    out = []
    for a, b in windows:
        apps = [ev.app_id for ev in subject.app_events
                if ev.kind == "open" and a <= ev.ts < b]
        if apps:
            out.append((a, b, tuple(apps)))
    return out


def random_subject(rng, n_events):
    apps, locks = [], []
    for _ in range(n_events):
        ts = int(rng.integers(0, 40))
        r = rng.random()
        if r < 0.3:
            locks.append(LockEvent("s", "unlock" if rng.random() < 0.5 else "lock", ts))
        else:
            apps.append(AppEvent("s", "ABCD"[rng.integers(4)],
                                 "open" if r < 0.85 else "close", ts))
    return make_subject("s", "healthy", apps, locks)


def test_single_window():
    s = subject_from([(3, "A"), (7, "B")], [(0, "unlock"), (10, "lock")])
    (session,) = sessionize(s)
    assert session.apps == ("A", "B") and (session.start_ts, session.end_ts) == (0, 10)


def test_no_windows():
    assert sessionize(subject_from([(3, "A")])) == []


def test_half_open_interval_and_unpaired_events():
    s = subject_from(
        [(0, "A"), (10, "B"), (15, "C"), (30, "D")],
        [(0, "unlock"), (10, "lock"), (12, "lock"), (14, "unlock"), (14, "unlock"), (20, "lock"),
         (25, "unlock")],
    )
    sessions, stats = sessionize_with_stats(s)
    assert [x.apps for x in sessions] == [("A",), ("C",)]
    assert stats.dropped_opens == 2  # B at the lock instant, D after a dangling unlock
    assert stats.unpaired_locks == 1 and stats.unpaired_unlocks == 2


def test_empty_window_dropped():
    sessions, stats = sessionize_with_stats(
        subject_from([(3, "A")], [(0, "unlock"), (1, "lock"), (2, "unlock"), (5, "lock")]))
    assert len(sessions) == 1 and stats.empty_sessions == 1


def test_matches_brute_force_oracle_on_random_streams():
    rng = np.random.default_rng(7)
    for _ in range(300):
        s = random_subject(rng, int(rng.integers(0, 51)))
        got = [(x.start_ts, x.end_ts, x.apps) for x in sessionize(s)]
        assert got == brute_force_sessions(s)


def test_corpus_of_projects_opens():
    s = make_subject("s", "healthy", [AppEvent("s", "A", "open", 1), AppEvent("s", "A", "close", 2),
                                      AppEvent("s", "B", "open", 3), AppEvent("s", "A", "open", 4)])
    assert corpus_of(s) == ["A", "B", "A"]
    assert corpus_of(subject_from()) == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.sampled_from(["open", "close", "unlock", "lock"]),
                          st.sampled_from("ABC")), max_size=40),
       st.randoms(use_true_random=False))
def test_properties(rows, rnd):
    def build(rs):
        return make_subject(
            "s", "healthy",
            [AppEvent("s", app, k, ts) for ts, k, app in rs if k in ("open", "close")],
            [LockEvent("s", k, ts) for ts, k, _ in rs if k in ("unlock", "lock")])

    s = build(rows)
    sessions = sessionize(s)
    corpus = corpus_of(s)
    assert len(corpus) == sum(1 for _, k, _ in rows if k == "open")
    for a, b in zip(sessions, sessions[1:]):
        assert a.end_ts <= b.start_ts
    for x in sessions:
        assert x.start_ts < x.end_ts and x.apps
    # concatenated sessions form a subsequence of the corpus
    it = iter(corpus)
    assert all(any(app == c for c in it) for x in sessions for app in x.apps)
    # invariant to input row order, up to the relative order of rows sharing a timestamp
    order = list(range(len(rows)))
    rnd.shuffle(order)
    by_ts = {}
    for i in range(len(rows)):
        by_ts.setdefault(rows[i][0], []).append(i)
    slots = {ts: iter(ix) for ts, ix in by_ts.items()}
    permuted = [rows[next(slots[rows[i][0]])] for i in order]
    again = sessionize(build(permuted))
    assert again == sessions
