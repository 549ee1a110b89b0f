import json

import pytest

from appsessions.ingest import AppEvent, LockEvent, make_subject


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


@pytest.fixture
def two_subject_files(tmp_path):
    rows = [
        {"subject": "s01", "ts": 0, "stream": "lock", "kind": "unlock"},
        {"subject": "s01", "ts": 3, "stream": "app", "kind": "open", "app": "A"},
        {"subject": "s01", "ts": 5, "stream": "app", "kind": "close", "app": "A"},
        {"subject": "s01", "ts": 7, "stream": "app", "kind": "open", "app": "B"},
        {"subject": "s01", "ts": 10, "stream": "lock", "kind": "lock"},
        {"subject": "s02", "ts": 100, "stream": "lock", "kind": "unlock"},
        {"subject": "s02", "ts": 101, "stream": "app", "kind": "open", "app": "C"},
        {"subject": "s02", "ts": 200, "stream": "lock", "kind": "lock"},
    ]
    events = tmp_path / "events.jsonl"
    labels = tmp_path / "labels.csv"
    write_jsonl(events, rows)
    labels.write_text("subject,label,days_observed\ns01,healthy,84\ns02,symptomatic,\n")
    return events, labels, rows


def subject_from(opens=(), locks=(), sid="s", label="healthy", days=None):
    """opens: (ts, app) pairs; locks: (ts, kind) pairs."""
    return make_subject(
        sid, label,
        [AppEvent(sid, app, "open", ts) for ts, app in opens],
        [LockEvent(sid, kind, ts) for ts, kind in locks],
        days,
    )


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
