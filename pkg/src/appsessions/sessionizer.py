"""Segmenting app-open streams into unlock/lock interaction sessions."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .ingest import Subject


@dataclass(frozen=True)
class Session:
    subject_id: str
    start_ts: int
    end_ts: int
    apps: tuple[str, ...]


@dataclass
class SessionStats:
    """Diagnostic counters accumulated while sessionizing."""

    sessions: int = 0
    empty_sessions: int = 0
    dropped_opens: int = 0
    unpaired_locks: int = 0
    unpaired_unlocks: int = 0

    def add(self, other: "SessionStats") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def lock_windows(subject: Subject, stats: SessionStats | None = None) -> list[tuple[int, int]]:
    """Pair each unlock with the next lock.

    A lock with no open window is skipped, as is a repeated unlock (the first
    one opens the window). A zero-length window cannot hold an open and is
    dropped later as empty.
    """
    stats = stats if stats is not None else SessionStats()
    windows = []
    start = None
    for ev in subject.lock_events:
        if ev.kind == "unlock":
            if start is None:
                start = ev.ts
            else:
                stats.unpaired_unlocks += 1
        else:
            if start is None:
                stats.unpaired_locks += 1
            else:
                windows.append((start, ev.ts))
                start = None
    if start is not None:
        stats.unpaired_unlocks += 1
    return windows


def sessionize_with_stats(subject: Subject) -> tuple[list[Session], SessionStats]:
    stats = SessionStats()
    windows = lock_windows(subject, stats)
    starts = [w[0] for w in windows]
    buckets: list[list[str]] = [[] for _ in windows]
    for ev in subject.app_events:
        if ev.kind != "open":
            continue
        i = bisect.bisect_right(starts, ev.ts) - 1
        if i >= 0 and ev.ts < windows[i][1]:
            buckets[i].append(ev.app_id)
        else:
            stats.dropped_opens += 1
    sessions = []
    for (start, end), apps in zip(windows, buckets):
        if apps:
            sessions.append(Session(subject.subject_id, start, end, tuple(apps)))
        else:
            stats.empty_sessions += 1
    stats.sessions = len(sessions)
    return sessions, stats


def sessionize(subject: Subject) -> list[Session]:
    """Group every app open that falls in ``[unlock, lock)`` into one session.

    Close events do not affect membership, opens outside all windows are
    discarded, and sessions without opens are dropped. Windows are disjoint
    by construction, so the output is sorted by start time.
    """
    return sessionize_with_stats(subject)[0]


def corpus_of(subject: Subject) -> list[str]:
    """The subject's app opens in time order, as one sentence."""
    return [ev.app_id for ev in subject.app_events if ev.kind == "open"]
