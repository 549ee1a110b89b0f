"""Synthetic cohorts with planted, controllable class structure.

Each subject's sessions are either *background* sessions (apps drawn from a
Zipf-weighted inventory) or *template* sessions whose core apps come from a
class-dependent template mixture. ``cooccurrence_signal`` blends the shared
template mixture (0) into the class-specific one (1).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ingest import AppEvent, Cohort, LockEvent, MS_PER_DAY, make_subject, save_cohort
from .seeding import rng_for

APPS = (
    "Messages", "Safari", "Mail", "Phone", "Facebook", "Calendar", "Clock", "Camera",
    "Photos", "Settings", "Instagram", "Weather", "Maps", "Music", "News", "YouTube",
    "WhatsApp", "Notes", "Calculator", "Contacts", "App Store", "Health", "Reminders",
    "Podcasts", "Books", "Wallet", "FaceTime", "Chrome", "Gmail", "Google", "Solitaire",
    "Words", "Netflix", "Pinterest", "Twitter", "Amazon", "eBay", "Kindle", "Spotify",
    "Banking",
)
CATEGORIES = {
    "Messages": "Social Networking", "Facebook": "Social Networking",
    "Instagram": "Social Networking", "WhatsApp": "Social Networking",
    "Twitter": "Social Networking", "Pinterest": "Social Networking",
    "FaceTime": "Social Networking", "Phone": "Utilities", "Contacts": "Utilities",
    "Clock": "Utilities", "Calculator": "Utilities", "Settings": "Utilities",
    "Safari": "Utilities", "Chrome": "Utilities", "Google": "Utilities",
    "Mail": "Productivity", "Gmail": "Productivity", "Calendar": "Productivity",
    "Notes": "Productivity", "Reminders": "Productivity", "Camera": "Photo & Video",
    "Photos": "Photo & Video", "YouTube": "Photo & Video", "Netflix": "Entertainment",
    "Solitaire": "Games", "Words": "Games", "Weather": "Weather", "Maps": "Navigation",
    "Music": "Music", "Spotify": "Music", "Podcasts": "Music", "News": "News",
    "Books": "Books", "Kindle": "Books", "App Store": "Shopping", "Amazon": "Shopping",
    "eBay": "Shopping", "Health": "Health & Fitness", "Wallet": "Finance",
    "Banking": "Finance",
}
STUDY_START_MS = 1_554_076_800_000  # 2019-04-01T00:00:00Z


class GeneratorError(ValueError):
    pass


def zipf_inventory(apps=APPS, exponent: float = 1.1) -> tuple[tuple[str, float], ...]:
    w = 1.0 / np.arange(1, len(apps) + 1) ** exponent
    w = w / w.sum()
    return tuple((a, float(x)) for a, x in zip(apps, w))


Template = tuple  # (core apps tuple, weight)


@dataclass(frozen=True)
class GeneratorConfig:
    n_healthy: int = 40
    n_symptomatic: int = 20
    days: float = 84.0
    sessions_per_day: float = 2.0
    app_inventory: tuple = field(default_factory=zipf_inventory)
    session_templates: dict = field(default_factory=dict)  # label -> ((apps...), weight)...
    cooccurrence_signal: float = 0.0
    marginal_matched: bool = True
    template_share: float = 0.5  # fraction of sessions drawn from templates
    extra_apps_mean: float = 0.3  # background apps mixed into a template session
    background_extra_mean: float = 0.7  # background session length is 1 + Poisson(this)
    app_tilt: dict = field(default_factory=dict)  # label -> {app: weight multiplier}
    volume_shape: float = 8.0  # Gamma shape of per-subject session-rate multiplier
    preference_concentration: float = 200.0  # Dirichlet jitter of per-subject app weights
    category_map: dict = field(default_factory=lambda: dict(CATEGORIES))
    seed: int = 0

    def templates(self):
        """All distinct templates plus each class's mixture weights over them."""
        cores = []
        for label in ("healthy", "symptomatic"):
            for core, _ in self.session_templates.get(label, ()):
                if tuple(core) not in cores:
                    cores.append(tuple(core))
        own = {}
        for label in ("healthy", "symptomatic"):
            w = np.zeros(len(cores))
            for core, weight in self.session_templates.get(label, ()):
                w[cores.index(tuple(core))] += weight
            if w.sum() > 0:
                w = w / w.sum()
            own[label] = w
        shared = 0.5 * (own["healthy"] + own["symptomatic"])
        s = self.cooccurrence_signal
        mix = {label: (1 - s) * shared + s * own[label] for label in own}
        return cores, mix

    def validate(self) -> None:
        if self.n_healthy < 0 or self.n_symptomatic < 0:
            raise GeneratorError("subject counts must be non-negative")
        if not self.days >= 1 or not self.sessions_per_day > 0:
            raise GeneratorError("days must be >= 1 and sessions_per_day > 0")
        if not 0.0 <= self.cooccurrence_signal <= 1.0:
            raise GeneratorError("cooccurrence_signal must lie in [0, 1]")
        if not 0.0 <= self.template_share <= 1.0:
            raise GeneratorError("template_share must lie in [0, 1]")
        names = [a for a, _ in self.app_inventory]
        weights = np.array([w for _, w in self.app_inventory], dtype=float)
        if len(set(names)) != len(names) or np.any(weights < 0) or weights.sum() <= 0:
            raise GeneratorError("app_inventory needs unique names and non-negative weights")
        for label, temps in self.session_templates.items():
            if label not in ("healthy", "symptomatic"):
                raise GeneratorError(f"unknown template class {label!r}")
            for core, weight in temps:
                if weight < 0 or not core or any(a not in names for a in core):
                    raise GeneratorError(f"bad template {core!r} for {label}")
        if self.template_share > 0 and not self.session_templates:
            raise GeneratorError("template_share > 0 needs session_templates")
        if self.marginal_matched:
            if any(self.app_tilt.values()):
                raise GeneratorError("marginal_matched cannot be combined with app_tilt")
            cores, mix = self.templates()
            per_app = {}
            for label, w in mix.items():
                counts = {}
                for core, p in zip(cores, w):
                    for a in core:
                        counts[a] = counts.get(a, 0.0) + p
                per_app[label] = counts
            apps = set(per_app["healthy"]) | set(per_app["symptomatic"])
            for a in apps:
                if abs(per_app["healthy"].get(a, 0.0) - per_app["symptomatic"].get(a, 0.0)) > 1e-12:
                    raise GeneratorError(
                        f"templates are not marginal-matched: app {a!r} differs across classes")


@dataclass
class SyntheticCohort:
    cohort: Cohort
    truth: dict  # subject_id -> {"label", "sessions": [template index or -1, ...]}
    config: GeneratorConfig

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"events": out / "events.jsonl", "labels": out / "labels.csv",
                 "category_map": out / "categories.csv", "truth": out / "truth.json"}
        save_cohort(self.cohort, paths["events"], paths["labels"], paths["category_map"])
        cores, _ = self.config.templates()
        sidecar = {"templates": [list(c) for c in cores], "subjects": self.truth,
                   "config": _config_dict(self.config)}
        paths["truth"].write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
        return {k: str(v) for k, v in paths.items()}


def _config_dict(config: GeneratorConfig) -> dict:
    d = asdict(config)
    d["app_inventory"] = [list(x) for x in config.app_inventory]
    d["session_templates"] = {k: [[list(c), w] for c, w in v]
                              for k, v in config.session_templates.items()}
    return d


def config_from_dict(d: dict) -> GeneratorConfig:
    d = dict(d)
    if "app_inventory" in d:
        d["app_inventory"] = tuple((a, float(w)) for a, w in d["app_inventory"])
    if "session_templates" in d:
        d["session_templates"] = {k: tuple((tuple(c), float(w)) for c, w in v)
                                  for k, v in d["session_templates"].items()}
    unknown = set(d) - set(GeneratorConfig.__dataclass_fields__)
    if unknown:
        raise GeneratorError(f"unknown generator keys: {sorted(unknown)}")
    return GeneratorConfig(**d)


def _subject_sessions(rng, config, label, names, base_weights, cores, mix):
    weights = base_weights.copy()
    for app, factor in config.app_tilt.get(label, {}).items():
        weights[names.index(app)] *= factor
    weights /= weights.sum()
    if config.preference_concentration > 0:
        weights = rng.dirichlet(config.preference_concentration * weights + 1e-9)
    template_p = mix[label] if len(cores) else None
    if template_p is not None and config.preference_concentration > 0 and template_p.sum() > 0:
        template_p = rng.dirichlet(config.preference_concentration * template_p + 1e-9)
    volume = rng.gamma(config.volume_shape, 1.0 / config.volume_shape) if config.volume_shape > 0 else 1.0
    n = rng.poisson(config.days * config.sessions_per_day * volume)
    sessions = []
    for _ in range(n):
        if template_p is not None and rng.random() < config.template_share:
            t = int(rng.choice(len(cores), p=template_p))
            extra = rng.poisson(config.extra_apps_mean)
            apps = list(cores[t]) + [names[i] for i in rng.choice(len(names), extra, p=weights)]
            rng.shuffle(apps)
        else:
            t = -1
            k = 1 + rng.poisson(config.background_extra_mean)
            apps = [names[i] for i in rng.choice(len(names), k, p=weights)]
        sessions.append((t, apps))
    return sessions


def _layout(rng, sid, sessions, config):
    """Place sessions in disjoint unlock/lock windows uniformly over the study span."""
    plans = []
    for _, apps in sessions:
        offsets = []
        cursor = int(rng.integers(500, 5_000))  # unlock -> first open
        for _ in apps:
            dur = int(1_000 + rng.exponential(30_000))
            offsets.append((cursor, cursor + dur))
            cursor += dur + int(rng.integers(200, 3_000))
        plans.append((offsets, cursor + int(rng.integers(500, 3_000))))
    span = int(config.days * MS_PER_DAY)
    gap = 1_000
    used = sum(length + gap for _, length in plans)
    free = span - used
    if free < 0:
        raise GeneratorError(
            f"cannot fit {len(sessions)} sessions of subject {sid} into {config.days} days; "
            "lower sessions_per_day")
    starts = np.sort(rng.integers(0, free + 1, size=len(plans)))
    app_events, lock_events = [], []
    shift = 0
    for (offsets, length), u, (_, apps) in zip(plans, starts, sessions):
        t0 = STUDY_START_MS + int(u) + shift
        lock_events.append(LockEvent(sid, "unlock", t0))
        for (a, b), app in zip(offsets, apps):
            app_events.append(AppEvent(sid, app, "open", t0 + a))
            app_events.append(AppEvent(sid, app, "close", t0 + b))
        lock_events.append(LockEvent(sid, "lock", t0 + length))
        shift += length + gap
    return app_events, lock_events


def generate(config: GeneratorConfig) -> SyntheticCohort:
    """Draw a cohort; subjects are independent given per-subject derived seeds."""
    config.validate()
    names = [a for a, _ in config.app_inventory]
    base = np.array([w for _, w in config.app_inventory], dtype=float)
    base /= base.sum()
    cores, mix = config.templates()
    n = config.n_healthy + config.n_symptomatic
    labels = ["healthy"] * config.n_healthy + ["symptomatic"] * config.n_symptomatic
    labels = [labels[i] for i in rng_for(config.seed, "label-order").permutation(n)]
    width = max(3, len(str(n)))
    subjects, truth = [], {}
    for i, label in enumerate(labels):
        sid = f"s{i + 1:0{width}d}"
        rng = rng_for(config.seed, "subject", sid)
        sessions = _subject_sessions(rng, config, label, names, base, cores, mix)
        apps, locks = _layout(rng, sid, sessions, config)
        subjects.append(make_subject(sid, label, apps, locks, float(config.days)))
        truth[sid] = {"label": label, "sessions": [t for t, _ in sessions]}
    cmap = {a: config.category_map.get(a, "unknown") for a in names} if config.category_map else None
    return SyntheticCohort(Cohort(tuple(subjects), cmap), truth, config)


# Crossed app pairs: every class opens each of the four apps equally often,
# only the pairing within a session differs.
CROSSED_PAIRS = {
    "symptomatic": ((("Messages", "Mail"), 1.0), (("Safari", "Facebook"), 1.0)),
    "healthy": ((("Mail", "Facebook"), 1.0), (("Messages", "Safari"), 1.0)),
}

SCENARIOS = ("E1_strong_cooccurrence", "E2_null", "E3_marginal_only")


def scenario(name: str, seed: int = 0) -> GeneratorConfig:
    """Frozen named configurations used by the acceptance experiments."""
    if name == "E1_strong_cooccurrence":
        return GeneratorConfig(session_templates=CROSSED_PAIRS, cooccurrence_signal=0.8,
                               marginal_matched=True, seed=seed)
    if name == "E2_null":
        return GeneratorConfig(session_templates=CROSSED_PAIRS, cooccurrence_signal=0.0,
                               marginal_matched=True, seed=seed)
    if name == "E3_marginal_only":
        return GeneratorConfig(
            session_templates=CROSSED_PAIRS, cooccurrence_signal=0.0, marginal_matched=False,
            app_tilt={"symptomatic": {"Phone": 2.5, "Clock": 2.5, "Calendar": 2.5}}, seed=seed)
    raise GeneratorError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")


def with_seed(config: GeneratorConfig, seed: int) -> GeneratorConfig:
    return replace(config, seed=seed)
