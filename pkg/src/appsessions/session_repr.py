"""Fixed-length session vectors: embedding means and one-hot histograms."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingModel
from .sessionizer import Session

DROPPED = None


@dataclass(frozen=True)
class SessionVector:
    session: Session
    repr: str  # "embedding_mean" | "onehot_app" | "onehot_category"
    values: np.ndarray
    skipped_apps: int = 0


def _apps(session, dedupe: bool):
    apps = session.apps if isinstance(session, Session) else tuple(session)
    return tuple(dict.fromkeys(apps)) if dedupe else apps


def mean_of_rows(indices: Sequence[int], vectors: np.ndarray) -> np.ndarray:
    """Mean of ``vectors[indices]`` with multiplicity, in canonical (sorted-index) order.

    Summing count * row over sorted distinct indices makes the result exactly
    independent of the order apps were opened in, and k copies of one
    float32 row average back to that row bit for bit.
    """
    idx, counts = np.unique(np.asarray(indices, dtype=np.int64), return_counts=True)
    rows = vectors[idx].astype(np.float64)
    return (counts[:, None] * rows).sum(axis=0) / counts.sum()


def session_vector_mean(session, model: EmbeddingModel, dedupe_within_session: bool = False):
    """Average embedding of the session's in-vocab apps, or ``DROPPED`` if none are known."""
    apps = _apps(session, dedupe_within_session)
    index = model.vocab.index
    known = [index[a] for a in apps if a in index]
    if not known:
        return DROPPED
    return SessionVector(session, "embedding_mean", mean_of_rows(known, model.vectors),
                         len(apps) - len(known))


def session_vector_onehot(session, space: Sequence[str], category_of=None,
                          dedupe_within_session: bool = False):
    """Within-session relative frequency histogram over ``space``.

    With ``category_of`` the apps are first mapped to categories; ``space``
    must then contain the reserved unknown category, which catches every
    unmapped app. Without it, apps outside ``space`` are skipped and a
    session with no in-space app is ``DROPPED``.
    """
    apps = _apps(session, dedupe_within_session)
    position = {name: i for i, name in enumerate(space)}
    if category_of is not None:
        tokens = [category_of(a) for a in apps]
        kind = "onehot_category"
    else:
        tokens = list(apps)
        kind = "onehot_app"
    counts = Counter(t for t in tokens if t in position)
    total = sum(counts.values())
    if total == 0:
        return DROPPED
    values = np.zeros(len(space))
    for token, c in counts.items():
        values[position[token]] = c
    return SessionVector(session, kind, values / total, len(tokens) - total)
