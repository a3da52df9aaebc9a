"""Flat key=value run configuration with per-stage key prefixes.

A config file holds one ``key = value`` pair per line (``#`` comments
allowed); the same ``key=value`` strings are accepted on the command line
via ``--set``.  Every key has a default, so a config only states what it
overrides.  The resolved configuration hashes deterministically, which the
run manifest records.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .featstore import SynthSpec
from .heads import TrainConfig
from .selftrain import SelfTrainConfig

_UNSET = object()


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_list(raw: str) -> tuple:
    return tuple(float(p) for p in raw.split(",") if p.strip())


def _parse_int_list(raw: str) -> tuple:
    return tuple(int(p) for p in raw.split(",") if p.strip())


DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_HEAD_COUNTS = tuple(range(10, 90, 10))

# key -> (parser, default); None defaults mean "optional, unset"
SCHEMA = {
    "features": (str, None),
    "features_format": (str, None),
    "labels": (str, None),
    "output_dir": (str, None),
    "seed": (int, 0),
    "threads": (int, 1),
    "synth.n": (int, None),
    "synth.d": (int, None),
    "synth.k": (int, None),
    "synth.separation": (float, 20.0),
    "synth.seed": (int, None),
    "neighbors.theta": (float, 0.3),
    "neighbors.k_min": (int, 50),
    "neighbors.file": (str, None),
    "neighbors.ground_truth": (_parse_bool, False),
    "neighbors.standardized": (_parse_bool, False),
    "train.num_clusters": (int, None),
    "train.num_heads": (int, 50),
    "train.tau_student": (float, 0.1),
    "train.tau_teacher": (float, 0.1),
    "train.beta": (float, 0.6),
    "train.lambda_max": (float, 0.5),
    "train.teacher_momentum": (float, 0.996),
    "train.sk_iters": (int, 3),
    "train.epochs": (int, 400),
    "train.warmup_epochs": (int, 100),
    "train.batch_size": (int, 256),
    "train.lr": (float, 1.25e-6),
    "train.weight_decay": (float, 1e-4),
    "train.smoothing_m": (int, 1),
    "ensemble.k": (int, None),
    "selftrain.steps": (int, 12500),
    "selftrain.lr": (float, 0.1),
    "selftrain.momentum": (float, 0.9),
    "selftrain.weight_decay": (float, 0.0),
    "selftrain.batch_size": (int, 256),
    "ablate.thresholds": (_parse_float_list, DEFAULT_THRESHOLDS),
    "ablate.head_counts": (_parse_int_list, DEFAULT_HEAD_COUNTS),
}


def parse_kv_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def resolve(file_entries: dict | None = None, overrides: list | None = None) -> dict:
    """Merge defaults, file entries and --set overrides into typed values."""
    merged = {}
    for source in (file_entries or {}, dict(_split_overrides(overrides or []))):
        for key, value in source.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value

    out = {}
    for key, (parser, default) in SCHEMA.items():
        if key in merged:
            try:
                out[key] = parser(merged[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
        else:
            out[key] = default
    return out


def _split_overrides(pairs):
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        yield key.strip(), value.strip()


def config_lines(resolved: dict) -> list:
    """Canonical one-line-per-key rendering of a resolved config."""
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return lines


def config_hash(resolved: dict) -> str:
    digest = hashlib.sha256()
    for line in config_lines(resolved):
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


@dataclass(frozen=True)
class PipelineConfig:
    """Typed view of a resolved configuration for the three-stage pipeline."""

    resolved: dict

    def __getitem__(self, key):
        return self.resolved[key]

    @property
    def seed(self) -> int:
        return self.resolved["seed"]

    @property
    def threads(self) -> int:
        return self.resolved["threads"]

    @property
    def features_path(self):
        return self.resolved["features"]

    @property
    def labels_path(self):
        return self.resolved["labels"]

    @property
    def output_dir(self):
        return self.resolved["output_dir"]

    def require(self, *keys) -> None:
        missing = [k for k in keys if self.resolved.get(k) is None]
        if missing:
            raise ConfigError(f"missing required config key(s): {', '.join(missing)}")

    def train_config(self) -> TrainConfig:
        self.require("train.num_clusters")
        r = self.resolved
        if r["train.num_clusters"] < 2:
            raise ConfigError("train.num_clusters must be >= 2")
        try:
            return TrainConfig(
                num_clusters=r["train.num_clusters"],
                num_heads=r["train.num_heads"],
                tau_student=r["train.tau_student"],
                tau_teacher=r["train.tau_teacher"],
                beta=r["train.beta"],
                lambda_max=r["train.lambda_max"],
                teacher_momentum=r["train.teacher_momentum"],
                sk_iters=r["train.sk_iters"],
                epochs=r["train.epochs"],
                warmup_epochs=r["train.warmup_epochs"],
                batch_size=r["train.batch_size"],
                lr=r["train.lr"],
                weight_decay=r["train.weight_decay"],
                smoothing_m=r["train.smoothing_m"],
                seed=r["seed"],
            )
        except ValueError as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc

    def ensemble_k(self) -> int:
        k = self.resolved["ensemble.k"]
        if k is None:
            self.require("train.num_clusters")
            k = self.resolved["train.num_clusters"]
        if k < 2:
            raise ConfigError("ensemble.k must be >= 2")
        return k

    def selftrain_config(self) -> SelfTrainConfig:
        r = self.resolved
        try:
            return SelfTrainConfig(
                steps=r["selftrain.steps"],
                lr=r["selftrain.lr"],
                momentum=r["selftrain.momentum"],
                weight_decay=r["selftrain.weight_decay"],
                batch_size=r["selftrain.batch_size"],
                seed=r["seed"],
            )
        except ValueError as exc:
            raise ConfigError(f"invalid selftrain config: {exc}") from exc

    def synth_spec(self) -> SynthSpec:
        self.require("synth.n", "synth.d", "synth.k")
        r = self.resolved
        seed = r["synth.seed"] if r["synth.seed"] is not None else r["seed"]
        try:
            return SynthSpec(
                n=r["synth.n"], d=r["synth.d"], k=r["synth.k"],
                separation=r["synth.separation"], seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from exc

    def hash(self) -> str:
        return config_hash(self.resolved)


def load_pipeline_config(path=None, overrides: list | None = None) -> PipelineConfig:
    entries = read_config_file(path) if path is not None else {}
    return PipelineConfig(resolve(entries, overrides))
