"""Nested leave-one-out evaluation, AUROC and the ablation table."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import classifier
from .clustering import KMeansConfig, SessionTypeModel, assign_many, kmeans_fit
from .embedding import EmbeddingConfig, EmbeddingModel, Vocab, build_vocab, permute_embeddings, train_cbow
from .features import (CLUSTERED, EMBEDDED, VARIANTS, CohortTables, FeatureError, Rescaler,
                       build_tables, rescaler_fit)
from .ingest import Cohort
from .seeding import derive_seed

CHANCE_AUROC = 0.5


class EvaluationError(ValueError):
    pass


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg), ties counted as 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise EvaluationError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != len(y):
        raise EvaluationError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC needs both classes")
    ranks = rankdata(s)  # average ranks: ties share the mean rank
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) for every distinct score, highest threshold first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    P, N = (y == 1).sum(), (y == 0).sum()
    points = [(float("inf"), 0.0, 0.0)]
    for thr in np.unique(s)[::-1]:
        hit = s >= thr
        points.append((float(thr), float((hit & (y == 0)).sum() / N),
                       float((hit & (y == 1)).sum() / P)))
    return points


@dataclass(frozen=True)
class HyperGrid:
    Ks: tuple[int, ...] = (2, 5, 10, 20, 40)
    Cs: tuple[float, ...] = tuple(10.0 ** e for e in (-2, -1.5, -1, -0.5, 0, 0.5, 1))

    def __post_init__(self):
        if not self.Ks or not self.Cs:
            raise EvaluationError("grid must be non-empty")
        if list(self.Ks) != sorted(self.Ks) or list(self.Cs) != sorted(self.Cs):
            raise EvaluationError("grid values must be sorted ascending")
        if min(self.Ks) < 1 or min(self.Cs) <= 0:
            raise EvaluationError("Ks must be >= 1 and Cs > 0")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by every fold. Seeds inside the nested configs are ignored;
    each fold derives its own from the root seed."""

    embedding: EmbeddingConfig = EmbeddingConfig()
    kmeans: KMeansConfig = KMeansConfig()
    rescaler_mode: str = "per_column"
    fit_scope: str = "per_fold"
    inner_artifacts: str = "outer"
    sentence_scope: str = "user"
    dedupe_within_session: bool = False
    tol: float = 1e-8
    max_iter: int = 10_000

    def __post_init__(self):
        if self.fit_scope not in ("per_fold", "global"):
            raise EvaluationError(f"fit_scope must be per_fold or global, got {self.fit_scope!r}")
        if self.inner_artifacts not in ("outer", "refit"):
            raise EvaluationError("inner_artifacts must be 'outer' or 'refit'")
        if self.rescaler_mode not in ("per_column", "global_scalar"):
            raise EvaluationError(f"unknown rescaler mode {self.rescaler_mode!r}")


@dataclass
class FoldArtifacts:
    """Unsupervised artifacts fit on ``fit_ids`` plus raw features for every cohort row."""

    label: str
    variant: str
    fit_ids: tuple[str, ...]
    embedding: EmbeddingModel | None = None
    type_models: dict = field(default_factory=dict)  # K -> SessionTypeModel
    vocab: Vocab | None = None
    space: tuple[str, ...] | None = None
    matrices: dict = field(default_factory=dict)  # K (None if unclustered) -> n_cohort x d
    slots: dict = field(default_factory=dict)  # K -> per-key (or per-app) type id, -1 if dropped


@dataclass
class FoldModel:
    """The supervised end of one fold: what introspection needs to explain a prediction."""

    subject_id: str
    K: int | None
    C: float
    rescaler: Rescaler
    fit: classifier.FitResult
    artifacts: FoldArtifacts


@dataclass
class EvaluationReport:
    variant: str
    fit_scope: str
    seed: int
    per_subject: list  # dicts: subject, label, prob, K, C
    auroc: float
    grid: HyperGrid
    diagnostics: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    fold_models: list = field(default_factory=list, repr=False)

    def recompute_auroc(self) -> float:
        return auroc([e["prob"] for e in self.per_subject], [e["label"] for e in self.per_subject])

    def to_dict(self) -> dict:
        # runtime is left out on purpose: report files must replay byte for byte
        return {"variant": self.variant, "fit_scope": self.fit_scope, "seed": self.seed,
                "auroc": self.auroc, "grid": {"Ks": list(self.grid.Ks), "Cs": list(self.grid.Cs)},
                "per_subject": self.per_subject, "diagnostics": self.diagnostics}

    def write(self, out_dir, stem: str | None = None) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"report_{self.variant}"
        paths = {"json": out / f"{stem}.json", "csv": out / f"{stem}.csv",
                 "roc": out / f"roc_{self.variant}.csv"}
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        with open(paths["csv"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "label", "prob", "K", "C"])
            for e in self.per_subject:
                w.writerow([e["subject"], e["label"], repr(e["prob"]),
                            "" if e["K"] is None else e["K"], repr(e["C"])])
        with open(paths["roc"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            probs = [e["prob"] for e in self.per_subject]
            labels = [e["label"] for e in self.per_subject]
            for thr, fpr, tpr in roc_points(probs, labels):
                w.writerow([repr(thr), repr(fpr), repr(tpr)])
        return {k: str(v) for k, v in paths.items()}


# -- fold artifacts ---------------------------------------------------------

def _embedding_for(tables, fit_rows, cfg, seed, label, cache):
    key = ("embedding", label, tuple(fit_rows))
    if cache is not None and key in cache:
        return cache[key]
    corpora = [sentence for r in fit_rows for sentence in tables.corpora[r]]
    ecfg = replace(cfg.embedding, seed=derive_seed(seed, label, "embedding"))
    model = train_cbow(corpora, ecfg)
    if cache is not None:
        cache[key] = model
    return model


def _key_vectors_for(tables, embedding, key, cache):
    if cache is not None and key in cache:
        return cache[key]
    out = tables.key_vectors(embedding)
    if cache is not None:
        cache[key] = out
    return out


def build_fold(tables: CohortTables, variant: str, Ks: Sequence[int] | None, fit_rows,
               cfg: PipelineConfig, seed: int, label: str, cache: dict | None = None) -> FoldArtifacts:
    """Fit the variant's unsupervised artifacts on ``fit_rows`` and featurize every subject.

    Only the events of ``fit_rows`` influence the artifacts; every random
    stream is derived from ``(seed, label, ...)``.
    """
    if variant not in VARIANTS:
        raise FeatureError(f"unknown variant {variant!r}")
    fit_rows = list(fit_rows)
    rows = list(range(len(tables)))
    art = FoldArtifacts(label, variant, tuple(tables.subject_ids[r] for r in fit_rows))
    if variant in EMBEDDED:
        if not Ks:
            raise EvaluationError(f"variant {variant} needs a K grid")
        emb = _embedding_for(tables, fit_rows, cfg, seed, label, cache)
        if variant == "B2":
            emb = permute_embeddings(emb, derive_seed(seed, label, "permute"))
        art.embedding = emb
        if variant == "B1":
            vmap = tables.vocab_map(emb.vocab)
            app_counts = tables.app_counts(fit_rows)
            w = np.zeros(len(emb.vocab))
            known = vmap >= 0
            np.add.at(w, vmap[known], app_counts[known])
            points = emb.vectors.astype(np.float64)
            sel = w > 0
        else:
            points, valid = _key_vectors_for(tables, emb, ("keyvec", variant, label, tuple(fit_rows)), cache)
            w = tables.key_counts(fit_rows) * valid
            sel = w > 0
        for K in Ks:
            kcfg = replace(cfg.kmeans, K=K, seed=derive_seed(seed, label, variant, "kmeans"))
            model = kmeans_fit(points[sel], kcfg, w[sel])
            art.type_models[K] = model
            labels, _ = assign_many(points, model.centroids)
            if variant == "B1":
                slot_of_app = np.where(known, labels[np.maximum(vmap, 0)], -1)
                art.slots[K] = slot_of_app
                art.matrices[K] = tables.per_subject_counts(slot_of_app, K, rows, by="opens")
            else:
                slot_of_key = np.where(valid, labels, -1)
                art.slots[K] = slot_of_key
                art.matrices[K] = tables.per_subject_counts(slot_of_key, K, rows, by="keys")
        return art
    if variant in ("B3", "B5"):
        corpus = [[tables.apps[i] for i in tables.opens[r]] for r in fit_rows]
        art.vocab = build_vocab(corpus, cfg.embedding.min_count)
        art.space = art.vocab.apps
        slot_of_app = tables.vocab_map(art.vocab)
    else:
        art.space = tables.categories
        pos = {c: i for i, c in enumerate(art.space)}
        slot_of_app = np.array([pos[tables.category_of(a)] for a in tables.apps], dtype=np.int64)
    size = len(art.space)
    if variant in ("B3", "B4"):
        hist, valid = tables.key_histograms(slot_of_app, size)
        art.matrices[None] = tables.per_subject_sum(hist, valid, rows)
    else:
        art.matrices[None] = tables.per_subject_counts(slot_of_app, size, rows, by="opens")
    return art


# -- supervised loops -------------------------------------------------------

def _fit_path(X_tr, y_tr, Cs, cfg, starts=None):
    """Fits along the C grid; each starts from ``starts[i]`` or else the previous C's solution."""
    fits = []
    w, b = None, 0.0
    for i, C in enumerate(Cs):
        if starts is not None:
            w, b = starts[i]
        res = classifier.fit(X_tr, y_tr, C, cfg.tol, cfg.max_iter, w0=w, b0=b)
        fits.append(res)
        w, b = res.weights, res.intercept
    return fits


def _fit_predict_path(X_tr, y_tr, x_te, Cs, cfg, starts=None) -> np.ndarray:
    """Predictions for one held-out row along the C grid."""
    if y_tr.min() == y_tr.max():
        return np.full(len(Cs), y_tr.mean())  # degenerate fold: class prior
    fits = _fit_path(X_tr, y_tr, Cs, cfg, starts)
    return np.array([classifier.predict_proba(f, x_te) for f in fits])


def loo_predictions(X, y, Cs, cfg: PipelineConfig) -> np.ndarray:
    """Leave-one-out probabilities on a fixed raw feature matrix, shape (len(Cs), n).

    The rescaler is refit on each training split and the held-out row is
    scaled with the training factors. Each split's fit is warm-started from
    the all-rows solution at the same C, mapped to the split's feature
    scale; the optimum itself does not depend on the starting point.
    """
    n = len(y)
    preds = np.empty((len(Cs), n))
    ref_scale = rescaler_fit(X, cfg.rescaler_mode).factors
    ref = _fit_path(X / ref_scale, y, Cs, cfg) if y.min() != y.max() else None
    degenerate = 0
    for j in range(n):
        mask = np.arange(n) != j
        resc = rescaler_fit(X[mask], cfg.rescaler_mode)
        if y[mask].min() == y[mask].max():
            degenerate += 1
        starts = None
        if ref is not None:
            starts = [(f.weights * resc.factors / ref_scale, f.intercept) for f in ref]
        preds[:, j] = _fit_predict_path(X[mask] / resc.factors, y[mask], X[j] / resc.factors,
                                        Cs, cfg, starts)
    if degenerate == n:
        raise EvaluationError("every inner fold has a single-class training set")
    return preds


@dataclass
class InnerSelection:
    K: int | None
    C: float
    scores: dict  # (K, C) -> inner AUROC


def inner_select(tables: CohortTables, train_rows, grid: HyperGrid, variant: str,
                 cfg: PipelineConfig, seed: int, label: str, outer: FoldArtifacts | None = None,
                 cache: dict | None = None) -> InnerSelection:
    """Choose (K, C) by leave-one-out AUROC over ``train_rows``.

    With ``inner_artifacts='outer'`` (or ``fit_scope='global'``) the feature
    matrices of ``outer`` are reused for every inner split; with ``'refit'``
    the unsupervised artifacts are refit without each inner held-out
    subject. Ties go to the smaller K, then the smaller C.
    """
    train_rows = list(train_rows)
    y = tables.y[train_rows]
    if len(train_rows) < 3 or y.min() == y.max():
        raise EvaluationError("inner selection needs >= 3 training subjects with both classes")
    Ks = list(grid.Ks) if variant in CLUSTERED else [None]
    Cs = list(grid.Cs)
    refit = cfg.fit_scope == "per_fold" and cfg.inner_artifacts == "refit"
    if not refit and outer is None:
        outer = build_fold(tables, variant, grid.Ks if variant in CLUSTERED else None,
                           train_rows, cfg, seed, label, cache)
    preds = {K: np.empty((len(Cs), len(train_rows))) for K in Ks}
    if refit:
        for j, r in enumerate(train_rows):
            rest = [q for q in train_rows if q != r]
            art = build_fold(tables, variant, grid.Ks if variant in CLUSTERED else None, rest,
                             cfg, seed, f"{label}/inner:{tables.subject_ids[r]}", cache)
            for K in Ks:
                X = art.matrices[K]
                resc = rescaler_fit(X[rest], cfg.rescaler_mode)
                preds[K][:, j] = _fit_predict_path(X[rest] / resc.factors, tables.y[rest],
                                                   X[r] / resc.factors, Cs, cfg)
    else:
        for K in Ks:
            preds[K] = loo_predictions(outer.matrices[K][train_rows], y, Cs, cfg)
    scores = {}
    best = None
    for K in Ks:
        for i, C in enumerate(Cs):
            a = auroc(preds[K][i], y)
            scores[(K, C)] = a
            if best is None or a > best[0]:
                best = (a, K, C)
    return InnerSelection(best[1], best[2], scores)


def fit_final(X_train, y_train, C, cfg: PipelineConfig):
    resc = rescaler_fit(X_train, cfg.rescaler_mode)
    res = classifier.fit(X_train / resc.factors, y_train, C, cfg.tol, cfg.max_iter)
    return resc, res


def outer_loo(cohort_or_tables, variant: str, grid: HyperGrid = HyperGrid(),
              cfg: PipelineConfig = PipelineConfig(), seed: int = 0, keep_models: bool = False,
              cache: dict | None = None) -> EvaluationReport:
    """Nested LOO: every subject is predicted by a model that never saw its events.

    Under ``fit_scope='per_fold'`` the embedding, clustering and vocabularies
    are fit on the N-1 training subjects of each outer split; under
    ``'global'`` they are fit once on the whole cohort. The rescaler and the
    classifier are always fit on training subjects only.
    """
    t0 = time.perf_counter()
    tables = _tables(cohort_or_tables, cfg)
    n = len(tables)
    y = tables.y
    if n < 4 or y.min() == y.max() or y.min() < 0:
        raise EvaluationError("outer LOO needs >= 4 labelled subjects with both classes")
    cache = {} if cache is None else cache
    Ks = grid.Ks if variant in CLUSTERED else None
    global_art = None
    if cfg.fit_scope == "global":
        global_art = build_fold(tables, variant, Ks, range(n), cfg, seed, "global", cache)
    entries, models = [], []
    for i in range(n):
        sid = tables.subject_ids[i]
        label = f"outer:{sid}"
        train = [r for r in range(n) if r != i]
        art = global_art or build_fold(tables, variant, Ks, train, cfg, seed, label, cache)
        sel = inner_select(tables, train, grid, variant, cfg, seed, label, outer=art, cache=cache)
        X = art.matrices[sel.K]
        resc, res = fit_final(X[train], y[train], sel.C, cfg)
        prob = float(classifier.predict_proba(res, X[i] / resc.factors))
        entries.append({"subject": sid, "label": int(y[i]), "prob": prob, "K": sel.K, "C": sel.C})
        if keep_models:
            models.append(FoldModel(sid, sel.K, sel.C, resc, res, art))
        if cfg.fit_scope == "per_fold":
            _evict(cache, label)
    report = EvaluationReport(variant, cfg.fit_scope, seed, entries, 0.0, grid,
                              {"sessionizer": dict(tables.stats)})
    report.auroc = report.recompute_auroc()
    report.fold_models = models
    report.runtime_s = time.perf_counter() - t0
    return report


def _evict(cache, label):
    # embeddings stay cached so that full, B1 and B2 share them within an ablation run
    for key in [k for k in cache if k[0] == "keyvec" and k[2] == label]:
        del cache[key]


def _tables(cohort_or_tables, cfg):
    if isinstance(cohort_or_tables, CohortTables):
        if cohort_or_tables.dedupe_within_session != cfg.dedupe_within_session:
            raise EvaluationError("tables were built with a different dedupe_within_session")
        return cohort_or_tables
    if isinstance(cohort_or_tables, Cohort):
        return build_tables(cohort_or_tables, cfg.sentence_scope, cfg.dedupe_within_session)
    raise TypeError("expected a Cohort or CohortTables")


@dataclass
class AblationTable:
    reports: dict  # variant -> EvaluationReport

    def rows(self) -> list[tuple[str, float]]:
        return [(v, self.reports[v].auroc) for v in VARIANTS if v in self.reports] + [
            ("chance", CHANCE_AUROC)]

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "test_auroc"])
            for name, a in self.rows():
                w.writerow([name, repr(float(a))])
        table = {name: a for name, a in self.rows()}
        (out / "ablation.json").write_text(json.dumps(table, indent=1) + "\n")
        paths = {"csv": str(out / "ablation.csv"), "json": str(out / "ablation.json")}
        for v, rep in self.reports.items():
            paths.update({f"{v}_{k}": p for k, p in rep.write(out).items()})
        return paths


def ablation_table(cohort_or_tables, grid: HyperGrid = HyperGrid(),
                   cfg: PipelineConfig = PipelineConfig(), seed: int = 0,
                   variants: Sequence[str] = VARIANTS) -> AblationTable:
    """Run ``outer_loo`` for each variant with the same root seed and shared caches."""
    tables = _tables(cohort_or_tables, cfg)
    cache: dict = {}
    reports = {}
    for v in variants:
        reports[v] = outer_loo(tables, v, grid, cfg, seed, cache=cache)
    return AblationTable(reports)
