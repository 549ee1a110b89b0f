"""Per-subject feature vectors for the full model and the six ablations."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clustering import SessionTypeModel, assign_many
from .embedding import EmbeddingModel, Vocab
from .ingest import UNKNOWN_CATEGORY, Cohort, Subject, derive_days_observed
from .session_repr import mean_of_rows, session_vector_mean, session_vector_onehot
from .sessionizer import Session, corpus_of, sessionize

VARIANTS = ("full", "B1", "B2", "B3", "B4", "B5", "B6")
CLUSTERED = frozenset({"full", "B1", "B2"})
EMBEDDED = CLUSTERED
VARIANT_NOTES = {
    "full": "session-type counts (learned embeddings, sessions, k-means)",
    "B1": "cluster individual app embeddings, no sessions",
    "B2": "full model with app-embedding assignment randomly permuted",
    "B3": "sum of one-hot app session vectors",
    "B4": "sum of one-hot category session vectors",
    "B5": "app open counts",
    "B6": "category open counts",
}


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    variant: str
    K: int | None = None
    notes: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise FeatureError(f"unknown variant {self.variant!r}")
        if (self.K is not None) != (self.variant in CLUSTERED):
            raise FeatureError(f"K must be given iff the variant clusters ({self.variant})")
        if not self.notes:
            object.__setattr__(self, "notes", VARIANT_NOTES[self.variant])


@dataclass(frozen=True)
class FeatureArtifacts:
    """Everything a variant needs besides the subject's own events.

    ``embedding`` is the (possibly permuted) app embedding; ``type_model``
    clusters session vectors (full, B2) or single app vectors (B1);
    ``vocab`` spans B3/B5 and ``categories`` spans B4/B6.
    """

    embedding: EmbeddingModel | None = None
    type_model: SessionTypeModel | None = None
    vocab: Vocab | None = None
    categories: tuple[str, ...] | None = None
    category_of: Callable[[str], str] | None = None


@dataclass(frozen=True)
class SubjectFeatures:
    subject_id: str
    values: np.ndarray
    label: str | None = None


def category_space(cohort: Cohort) -> tuple[str, ...]:
    """Sorted categories of the cohort's map, with the reserved unknown bucket last."""
    cats = set((cohort.category_map or {}).values()) - {UNKNOWN_CATEGORY}
    return tuple(sorted(cats)) + (UNKNOWN_CATEGORY,)


def _require(artifacts, *names):
    for name in names:
        if getattr(artifacts, name) is None:
            raise FeatureError(f"missing artifact {name!r} for this variant")


def featurize_sessions(sessions: Sequence[Session], opens: Sequence[str], days: float,
                       spec: FeatureSpec, artifacts: FeatureArtifacts,
                       dedupe_within_session: bool = False) -> np.ndarray:
    """Raw (pre-rescale) feature vector from a subject's sessions and app opens."""
    v = spec.variant
    if v in ("full", "B2"):
        _require(artifacts, "embedding", "type_model")
        vecs = [session_vector_mean(s, artifacts.embedding, dedupe_within_session)
                for s in sessions]
        vecs = [sv.values for sv in vecs if sv is not None]
        counts = np.zeros(spec.K)
        if vecs:
            labels, _ = assign_many(np.vstack(vecs), artifacts.type_model.centroids)
            counts = np.bincount(labels, minlength=spec.K).astype(np.float64)
    elif v == "B1":
        _require(artifacts, "embedding", "type_model")
        index = artifacts.embedding.vocab.index
        rows = [index[a] for a in opens if a in index]
        counts = np.zeros(spec.K)
        if rows:
            vecs = artifacts.embedding.vectors[np.asarray(rows)].astype(np.float64)
            labels, _ = assign_many(vecs, artifacts.type_model.centroids)
            counts = np.bincount(labels, minlength=spec.K).astype(np.float64)
    elif v in ("B3", "B4"):
        if v == "B3":
            _require(artifacts, "vocab")
            space, cat = artifacts.vocab.apps, None
        else:
            _require(artifacts, "categories", "category_of")
            space, cat = artifacts.categories, artifacts.category_of
        counts = np.zeros(len(space))
        for s in sessions:
            sv = session_vector_onehot(s, space, cat, dedupe_within_session)
            if sv is not None:
                counts += sv.values
    else:
        if v == "B5":
            _require(artifacts, "vocab")
            space, tokens = artifacts.vocab.apps, opens
        else:
            _require(artifacts, "categories", "category_of")
            space = artifacts.categories
            tokens = [artifacts.category_of(a) for a in opens]
        position = {name: i for i, name in enumerate(space)}
        counts = np.zeros(len(space))
        for token, c in Counter(tokens).items():
            if token in position:
                counts[position[token]] = c
    return counts / days


def featurize(subject: Subject, spec: FeatureSpec, artifacts: FeatureArtifacts,
              dedupe_within_session: bool = False) -> SubjectFeatures:
    values = featurize_sessions(sessionize(subject), corpus_of(subject),
                                derive_days_observed(subject), spec, artifacts,
                                dedupe_within_session)
    return SubjectFeatures(subject.subject_id, values, subject.label)


@dataclass(frozen=True)
class Rescaler:
    mode: str  # "per_column" | "global_scalar"
    factors: np.ndarray  # one per column; constant for global_scalar

    def apply(self, X):
        return rescaler_apply(X, self)


def rescaler_fit(train_features, mode: str = "per_column") -> Rescaler:
    """Factors that give the training features mean 1.

    ``per_column`` divides each column by its training mean (columns with
    zero mean keep factor 1); ``global_scalar`` divides everything by the
    grand mean.
    """
    X = _as_matrix(train_features)
    if X.shape[0] == 0:
        raise FeatureError("cannot fit a rescaler on an empty training set")
    if mode == "per_column":
        factors = X.mean(axis=0)
        factors[factors == 0] = 1.0
    elif mode == "global_scalar":
        g = X.mean()
        factors = np.full(X.shape[1], g if g != 0 else 1.0)
    else:
        raise FeatureError(f"unknown rescaler mode {mode!r}")
    return Rescaler(mode, factors)


def rescaler_apply(features, rescaler: Rescaler):
    """Divide by the fitted factors; accepts a matrix, a vector or SubjectFeatures."""
    if isinstance(features, SubjectFeatures):
        return SubjectFeatures(features.subject_id, rescaler_apply(features.values, rescaler),
                               features.label)
    if isinstance(features, (list, tuple)) and features and isinstance(features[0], SubjectFeatures):
        return [rescaler_apply(f, rescaler) for f in features]
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != rescaler.factors.shape[0]:
        raise FeatureError(f"dimension mismatch: {X.shape[-1]} vs {rescaler.factors.shape[0]}")
    return X / rescaler.factors


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, (list, tuple)) and features and isinstance(features[0], SubjectFeatures):
        return np.vstack([f.values for f in features])
    X = np.asarray(features, dtype=np.float64)
    return X.reshape(0, 0) if X.size == 0 else np.atleast_2d(X)


def write_features_csv(path, features: Sequence[SubjectFeatures]) -> None:
    d = len(features[0].values) if features else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "label"] + [f"f{j}" for j in range(d)])
        for f in features:
            w.writerow([f.subject_id, f.label] + [repr(float(v)) for v in f.values])


@dataclass
class CohortTables:
    """Cohort-wide integer encoding of sessions and opens.

    Sessions are collapsed to their app multisets so that each distinct
    multiset is embedded and clustered once per fold, weighted by how often
    it occurs. This is the fast path used by the evaluation loops; it
    produces the same numbers as :func:`featurize`.
    """

    subject_ids: tuple[str, ...]
    y: np.ndarray
    days: np.ndarray
    apps: tuple[str, ...]  # cohort-wide app alphabet, sorted
    opens: list  # per subject: int array of app ids
    corpora: list  # per subject: list of sentences (list of app names)
    keys: tuple  # distinct session multisets, each a sorted tuple of app ids
    session_keys: list  # per subject: int array of key ids, one per session
    sessions: list  # per subject: list of Session
    category_of: Callable[[str], str]
    categories: tuple[str, ...]
    dedupe_within_session: bool = False
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.subject_ids)

    def key_counts(self, rows) -> np.ndarray:
        out = np.zeros(len(self.keys))
        for r in rows:
            out += np.bincount(self.session_keys[r], minlength=len(self.keys))
        return out

    def app_counts(self, rows) -> np.ndarray:
        out = np.zeros(len(self.apps))
        for r in rows:
            out += np.bincount(self.opens[r], minlength=len(self.apps))
        return out

    def vocab_map(self, vocab: Vocab) -> np.ndarray:
        """Cohort app id -> vocab row (or -1)."""
        return np.array([vocab.index.get(a, -1) for a in self.apps], dtype=np.int64)

    def key_vectors(self, embedding: EmbeddingModel):
        """Mean embedding per distinct session multiset; ``valid`` marks non-dropped keys."""
        vmap = self.vocab_map(embedding.vocab)
        out = np.zeros((len(self.keys), embedding.dim))
        valid = np.zeros(len(self.keys), dtype=bool)
        for k, key in enumerate(self.keys):
            rows = vmap[np.asarray(key, dtype=np.int64)]
            rows = rows[rows >= 0]
            if rows.size:
                out[k] = mean_of_rows(rows, embedding.vectors)
                valid[k] = True
        return out, valid

    def key_histograms(self, space_of_app: np.ndarray, size: int):
        """One-hot mean per session multiset; ``space_of_app`` maps app id -> slot or -1."""
        out = np.zeros((len(self.keys), size))
        valid = np.zeros(len(self.keys), dtype=bool)
        for k, key in enumerate(self.keys):
            slots = space_of_app[np.asarray(key, dtype=np.int64)]
            slots = slots[slots >= 0]
            if slots.size:
                out[k] = np.bincount(slots, minlength=size) / slots.size
                valid[k] = True
        return out, valid

    def per_subject_sum(self, key_rows: np.ndarray, valid: np.ndarray, rows) -> np.ndarray:
        """Sum of per-key rows over each subject's sessions, divided by days."""
        X = np.zeros((len(rows), key_rows.shape[1]))
        for i, r in enumerate(rows):
            keys = self.session_keys[r]
            keys = keys[valid[keys]]
            if keys.size:
                X[i] = key_rows[keys].sum(axis=0)
        return X / self.days[np.asarray(rows)][:, None]

    def per_subject_counts(self, slot_of_key: np.ndarray, size: int, rows, by="keys") -> np.ndarray:
        """Count sessions (``by='keys'``) or opens (``by='opens'``) per slot, per day."""
        X = np.zeros((len(rows), size))
        for i, r in enumerate(rows):
            ids = self.session_keys[r] if by == "keys" else self.opens[r]
            slots = slot_of_key[ids]
            slots = slots[slots >= 0]
            X[i] = np.bincount(slots, minlength=size)
        return X / self.days[np.asarray(rows)][:, None]


def build_tables(cohort: Cohort, sentence_scope: str = "user",
                 dedupe_within_session: bool = False) -> CohortTables:
    """Sessionize every subject and encode apps and session multisets as integers.

    Apps are numbered in sorted name order and session multisets in sorted
    order of their app names, so the encoding of any subset of subjects
    does not depend on which other subjects are present.
    """
    from .sessionizer import SessionStats, sessionize_with_stats

    if sentence_scope not in ("user", "session"):
        raise FeatureError(f"sentence_scope must be 'user' or 'session', got {sentence_scope!r}")
    raw_sessions, raw_corpora, days, y = [], [], [], []
    totals = SessionStats()
    for subject in cohort.subjects:
        sessions, stats = sessionize_with_stats(subject)
        totals.add(stats)
        raw_sessions.append(sessions)
        raw_corpora.append(corpus_of(subject))
        days.append(derive_days_observed(subject))
        y.append(subject.y if subject.label is not None else -1)
    names = sorted({a for c in raw_corpora for a in c}
                   | {a for ss in raw_sessions for s in ss for a in s.apps})
    app_id = {a: i for i, a in enumerate(names)}

    def key_of(session):
        apps = tuple(dict.fromkeys(session.apps)) if dedupe_within_session else session.apps
        return tuple(sorted(app_id[a] for a in apps))

    keys = sorted({key_of(s) for ss in raw_sessions for s in ss})
    key_id = {k: i for i, k in enumerate(keys)}
    return CohortTables(
        subject_ids=tuple(s.subject_id for s in cohort.subjects),
        y=np.array(y, dtype=np.int64),
        days=np.array(days, dtype=np.float64),
        apps=tuple(names),
        opens=[np.array([app_id[a] for a in c], dtype=np.int64) for c in raw_corpora],
        corpora=[[c] if sentence_scope == "user" else [list(s.apps) for s in ss]
                 for c, ss in zip(raw_corpora, raw_sessions)],
        keys=tuple(keys),
        session_keys=[np.array([key_id[key_of(s)] for s in ss], dtype=np.int64)
                      for ss in raw_sessions],
        sessions=raw_sessions,
        category_of=cohort.category_of,
        categories=category_space(cohort),
        dedupe_within_session=dedupe_within_session,
        stats=totals.as_dict(),
    )
