"""Command-line driver: synth, evaluate, ablate, introspect.

Every command reads one JSON config, derives all seeds from a single root
seed and writes a manifest next to its outputs so the run can be replayed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path

from . import evaluation, introspect, synthgen
from .clustering import KMeansConfig
from .embedding import EmbeddingConfig
from .evaluation import HyperGrid, PipelineConfig
from .features import VARIANTS
from .ingest import load_cohort

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
PATH_KEYS = ("events", "labels", "category_map", "out")
INTROSPECT_KEYS = {"top_n": 4, "top_m": 15, "n_sessions": 3, "per_group": 5}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    paths: dict = field(default_factory=dict)
    variant: str = "full"
    grid: HyperGrid = HyperGrid()
    embedding: EmbeddingConfig = EmbeddingConfig()
    kmeans: KMeansConfig = KMeansConfig()
    rescaler_mode: str = "per_column"
    fit_scope: str = "per_fold"
    inner_artifacts: str = "outer"
    sentence_scope: str = "user"
    dedupe_within_session: bool = False
    seed: int = 0
    synth: dict = field(default_factory=dict)  # {"scenario": name} and/or generator fields
    introspect: dict = field(default_factory=lambda: dict(INTROSPECT_KEYS))

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.embedding, self.kmeans, self.rescaler_mode, self.fit_scope,
                              self.inner_artifacts, self.sentence_scope,
                              self.dedupe_within_session)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["grid"] = {"Ks": list(self.grid.Ks), "Cs": list(self.grid.Cs)}
        d["embedding"] = asdict(self.embedding)
        d["kmeans"] = asdict(self.kmeans)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _strict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**d)


def config_from_dict(d: dict) -> RunConfig:
    """Build a RunConfig, rejecting any key it does not know."""
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    d = dict(d)
    unknown = set(d) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    if "paths" in d:
        bad = set(d["paths"]) - set(PATH_KEYS)
        if bad:
            raise ConfigError(f"paths: unknown keys {sorted(bad)}")
    if "grid" in d:
        g = d["grid"]
        if not isinstance(g, dict):
            raise ConfigError("grid: expected an object with Ks and/or Cs")
        if set(g) - {"Ks", "Cs"}:
            raise ConfigError(f"grid: unknown keys {sorted(set(g) - {'Ks', 'Cs'})}")
        d["grid"] = HyperGrid(**{k: tuple(v) for k, v in g.items()})
    if "embedding" in d:
        d["embedding"] = _strict(EmbeddingConfig, d["embedding"], "embedding")
        d["embedding"].validate()
    if "kmeans" in d:
        d["kmeans"] = _strict(KMeansConfig, d["kmeans"], "kmeans")
    if "introspect" in d:
        bad = set(d["introspect"]) - set(INTROSPECT_KEYS)
        if bad:
            raise ConfigError(f"introspect: unknown keys {sorted(bad)}")
        d["introspect"] = {**INTROSPECT_KEYS, **d["introspect"]}
    if "synth" in d:
        bad = set(d["synth"]) - {"scenario"} - set(synthgen.GeneratorConfig.__dataclass_fields__)
        if bad:
            raise ConfigError(f"synth: unknown keys {sorted(bad)}")
    cfg = RunConfig(**d)
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        raise ConfigError("seed must be an integer")
    cfg.pipeline()  # validates the remaining enums
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    return config_from_dict(raw)


def _out(cfg: RunConfig) -> Path:
    if "out" not in cfg.paths:
        raise ConfigError("paths.out (or --out) is required")
    return Path(cfg.paths["out"])


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: dict) -> Path:
    # no timestamps or hostnames: the manifest itself must replay byte for byte
    doc = {"command": command, "seed": cfg.seed, "config_sha256": cfg.digest(),
           "config": cfg.to_dict(), "versions": _versions(),
           "outputs": {k: Path(v).name for k, v in sorted(outputs.items())}}
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _generator(cfg: RunConfig) -> synthgen.GeneratorConfig:
    spec = dict(cfg.synth)
    name = spec.pop("scenario", None)
    base = synthgen.scenario(name, cfg.seed) if name else synthgen.GeneratorConfig(seed=cfg.seed)
    if spec:
        merged = {**synthgen._config_dict(base), **spec, "seed": cfg.seed}
        base = synthgen.config_from_dict(merged)
    base.validate()
    return base


def _cohort(cfg: RunConfig):
    """Cohort from the configured files, or generated in memory from ``synth``."""
    p = cfg.paths
    if "events" in p or "labels" in p:
        if "events" not in p or "labels" not in p:
            raise ConfigError("paths.events and paths.labels must be given together")
        for key in ("events", "labels", "category_map"):
            if key in p and not Path(p[key]).is_file():
                raise ConfigError(f"paths.{key}: file not found: {p[key]}")
        return load_cohort(p["events"], p["labels"], p.get("category_map"))
    if cfg.synth:
        return synthgen.generate(_generator(cfg)).cohort
    raise ConfigError("no input: set paths.events/paths.labels or a synth section")


def cmd_synth(cfg: RunConfig) -> dict:
    out = _out(cfg)
    paths = synthgen.generate(_generator(cfg)).write(out)
    paths["manifest"] = str(write_manifest(out, "synth", cfg, paths))
    return paths


def cmd_evaluate(cfg: RunConfig) -> dict:
    out = _out(cfg)
    report = evaluation.outer_loo(_cohort(cfg), cfg.variant, cfg.grid, cfg.pipeline(), cfg.seed)
    paths = report.write(out)
    paths["manifest"] = str(write_manifest(out, "evaluate", cfg, paths))
    return paths


def cmd_ablate(cfg: RunConfig) -> dict:
    out = _out(cfg)
    table = evaluation.ablation_table(_cohort(cfg), cfg.grid, cfg.pipeline(), cfg.seed)
    paths = table.write(out)
    paths["manifest"] = str(write_manifest(out, "ablate", cfg, paths))
    return paths


def cmd_introspect(cfg: RunConfig) -> dict:
    out = _out(cfg)
    opts = cfg.introspect
    pcfg = cfg.pipeline()
    tables = evaluation._tables(_cohort(cfg), pcfg)
    pipe = introspect.fit_all_subjects(tables, cfg.grid, pcfg, cfg.seed, cfg.variant)
    paths = introspect.write_type_report(out, pipe, opts["top_n"], opts["top_m"])
    report = evaluation.outer_loo(tables, cfg.variant, cfg.grid, pcfg, cfg.seed, keep_models=True)
    paths.update({f"loo_{k}": v for k, v in report.write(out).items()})
    subj = introspect.write_subject_report(out, report, tables, opts["n_sessions"], opts["per_group"])
    paths.update({f"subjects_{k}": v for k, v in subj.items()})
    paths["manifest"] = str(write_manifest(out, "introspect", cfg, paths))
    return paths


COMMANDS = {"synth": cmd_synth, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "introspect": cmd_introspect}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="appsessions",
                                 description="Session-type features from app-usage logs.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--seed", type=int, help="override the root seed")
    ap.add_argument("--out", help="output directory (overrides paths.out)")
    ap.add_argument("--variant", help="feature variant: " + ", ".join(VARIANTS))
    ap.add_argument("--fit-scope", choices=("per_fold", "global"))
    return ap


def resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["paths"] = {**cfg.paths, "out": args.out}
    if args.variant is not None:
        changes["variant"] = args.variant
    if args.fit_scope is not None:
        changes["fit_scope"] = args.fit_scope
    # round-trip so overrides get the same validation as file values
    return config_from_dict({**cfg.to_dict(), **changes}) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        paths = COMMANDS[args.command](cfg)
    except ValueError as e:  # every module error type derives from ValueError
        print(f"error: {type(e).__module__.rsplit('.', 1)[-1]}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for name, p in sorted(paths.items()):
        print(f"{name}\t{p}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
