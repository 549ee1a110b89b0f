"""Loading and validating per-subject app and lock event streams."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

MS_PER_DAY = 86_400_000
LABELS = ("healthy", "symptomatic")
UNKNOWN_CATEGORY = "unknown"


class IngestError(ValueError):
    """Raised for malformed input files or inconsistent cohorts."""


@dataclass(frozen=True)
class AppEvent:
    subject_id: str
    app_id: str
    kind: str  # "open" | "close"
    ts: int


@dataclass(frozen=True)
class LockEvent:
    subject_id: str
    kind: str  # "unlock" | "lock"
    ts: int


@dataclass(frozen=True)
class Subject:
    subject_id: str
    label: str | None
    app_events: tuple[AppEvent, ...] = ()
    lock_events: tuple[LockEvent, ...] = ()
    days_observed: float | None = None

    @property
    def y(self) -> int:
        """Binary target, symptomatic = 1."""
        if self.label is None:
            raise IngestError(f"subject {self.subject_id!r} has no label")
        return int(self.label == "symptomatic")


@dataclass(frozen=True)
class Cohort:
    subjects: tuple[Subject, ...]
    category_map: Mapping[str, str] | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise IngestError("subject ids must be unique")

    def category_of(self, app_id: str) -> str:
        if not self.category_map:
            return UNKNOWN_CATEGORY
        return self.category_map.get(app_id, UNKNOWN_CATEGORY)

    def subject(self, subject_id: str) -> Subject:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)

    def without(self, subject_id: str) -> "Cohort":
        return Cohort(
            tuple(s for s in self.subjects if s.subject_id != subject_id),
            self.category_map,
        )


def make_subject(
    subject_id: str,
    label: str | None,
    app_events: Iterable[AppEvent] = (),
    lock_events: Iterable[LockEvent] = (),
    days_observed: float | None = None,
) -> Subject:
    """Build a Subject with streams stably sorted by timestamp."""
    if label is not None and label not in LABELS:
        raise IngestError(f"unknown label {label!r} for subject {subject_id!r}")
    if days_observed is not None and not days_observed >= 1:
        raise IngestError(f"days_observed must be >= 1 for subject {subject_id!r}")
    apps = tuple(sorted(app_events, key=lambda e: e.ts))
    locks = tuple(sorted(lock_events, key=lambda e: e.ts))
    return Subject(subject_id, label, apps, locks, days_observed)


def derive_days_observed(subject: Subject) -> float:
    """Days of participation: metadata if present, else event span in days, floored at 1."""
    if subject.days_observed is not None:
        return float(subject.days_observed)
    stamps = [e.ts for e in subject.app_events] + [e.ts for e in subject.lock_events]
    if not stamps:
        raise IngestError(
            f"subject {subject.subject_id!r} has no events and no days_observed"
        )
    return max(1.0, (max(stamps) - min(stamps)) / MS_PER_DAY)


def _fail(path, lineno, fieldname, msg):
    raise IngestError(f"{path}:{lineno}: field {fieldname!r}: {msg}")


def _parse_event(obj, path, lineno):
    if not isinstance(obj, dict):
        _fail(path, lineno, "<line>", "expected a JSON object")
    subject = obj.get("subject")
    if not isinstance(subject, str) or not subject:
        _fail(path, lineno, "subject", "missing or not a non-empty string")
    ts = obj.get("ts")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
        _fail(path, lineno, "ts", "must be a non-negative integer (ms since epoch)")
    stream = obj.get("stream")
    kind = obj.get("kind")
    if stream == "app":
        if kind not in ("open", "close"):
            _fail(path, lineno, "kind", f"{kind!r} is not valid for stream 'app'")
        app = obj.get("app")
        if not isinstance(app, str) or not app:
            _fail(path, lineno, "app", "required non-empty string for stream 'app'")
        return AppEvent(subject, app, kind, ts)
    if stream == "lock":
        if kind not in ("unlock", "lock"):
            _fail(path, lineno, "kind", f"{kind!r} is not valid for stream 'lock'")
        if "app" in obj:
            _fail(path, lineno, "app", "not allowed for stream 'lock'")
        return LockEvent(subject, kind, ts)
    _fail(path, lineno, "stream", f"{stream!r} is not 'app' or 'lock'")


def read_events(path) -> tuple[dict, dict]:
    """Parse a JSON Lines events file into per-subject app and lock event lists."""
    apps: dict[str, list[AppEvent]] = {}
    locks: dict[str, list[LockEvent]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                _fail(path, lineno, "<line>", f"invalid JSON ({exc.msg})")
            event = _parse_event(obj, path, lineno)
            if isinstance(event, AppEvent):
                apps.setdefault(event.subject_id, []).append(event)
            else:
                locks.setdefault(event.subject_id, []).append(event)
    return apps, locks


def read_labels(path) -> dict[str, tuple[str, float | None]]:
    out: dict[str, tuple[str, float | None]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if header[:2] != ["subject", "label"] or not set(header) <= {
            "subject",
            "label",
            "days_observed",
        }:
            raise IngestError(
                f"{path}:1: header must be subject,label[,days_observed], got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            sid = (row.get("subject") or "").strip()
            if not sid:
                _fail(path, lineno, "subject", "empty")
            label = (row.get("label") or "").strip()
            if label not in LABELS:
                _fail(path, lineno, "label", f"unknown label {label!r}")
            days = None
            raw = (row.get("days_observed") or "").strip()
            if raw:
                try:
                    days = float(raw)
                except ValueError:
                    _fail(path, lineno, "days_observed", f"not a number: {raw!r}")
                if not days >= 1:
                    _fail(path, lineno, "days_observed", "must be >= 1")
            if sid in out:
                _fail(path, lineno, "subject", f"duplicate subject {sid!r}")
            out[sid] = (label, days)
    return out


def read_category_map(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if (reader.fieldnames or [])[:2] != ["app", "category"]:
            raise IngestError(f"{path}:1: header must be app,category")
        for lineno, row in enumerate(reader, start=2):
            app = (row.get("app") or "").strip()
            cat = (row.get("category") or "").strip()
            if not app:
                _fail(path, lineno, "app", "empty")
            if not cat:
                _fail(path, lineno, "category", "empty")
            out[app] = cat
    return out


def load_cohort(events_path, labels_path, category_map_path=None) -> Cohort:
    """Load a cohort from an events JSONL file, a labels CSV and an optional category map.

    Streams are stably sorted by timestamp; duplicate rows are kept. Subjects
    that appear in the labels file but have no events are kept with empty
    streams (they fail later in ``derive_days_observed`` unless the labels
    file provides ``days_observed``).
    """
    apps, locks = read_events(events_path)
    labels = read_labels(labels_path)
    missing = sorted((set(apps) | set(locks)) - set(labels))
    if missing:
        raise IngestError(
            f"{labels_path}: subjects present in events but not in labels: {missing}"
        )
    subjects = tuple(
        make_subject(sid, label, apps.get(sid, ()), locks.get(sid, ()), days)
        for sid, (label, days) in labels.items()
    )
    cmap = read_category_map(category_map_path) if category_map_path else None
    return Cohort(subjects, cmap)


def save_cohort(cohort: Cohort, events_path, labels_path, category_map_path=None) -> None:
    """Write a cohort in the ingest file formats (inverse of ``load_cohort``)."""
    Path(events_path).parent.mkdir(parents=True, exist_ok=True)
    with open(events_path, "w", encoding="utf-8", newline="\n") as fh:
        for s in cohort.subjects:
            rows = [(e.ts, 0, e) for e in s.lock_events] + [(e.ts, 1, e) for e in s.app_events]
            for _, _, e in sorted(rows, key=lambda r: (r[0], r[1])):
                if isinstance(e, AppEvent):
                    obj = {"subject": s.subject_id, "ts": e.ts, "stream": "app",
                           "kind": e.kind, "app": e.app_id}
                else:
                    obj = {"subject": s.subject_id, "ts": e.ts, "stream": "lock",
                           "kind": e.kind}
                fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
    with open(labels_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject", "label", "days_observed"])
        for s in cohort.subjects:
            days = "" if s.days_observed is None else repr(float(s.days_observed))
            writer.writerow([s.subject_id, s.label, days])
    if category_map_path is not None and cohort.category_map is not None:
        with open(category_map_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["app", "category"])
            for app in sorted(cohort.category_map):
                writer.writerow([app, cohort.category_map[app]])
