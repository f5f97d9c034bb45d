"""Experiment configuration: JSON sections, dotted overrides, seed fan-out.

A config document has up to four flat sections::

    {"model": {...}, "attack": {...}, "defense": {...}, "harness": {...}}

Command-line overrides use dotted keys (``defense.alpha=0.2``) and win over
the file. Values are parsed as JSON when possible, otherwise kept as strings.

A single master seed fans out to every component through
:func:`tensordefense.model.sub_seed` with the names ``"model"``,
``"corpus"``, ``"attack"`` and ``"defense"``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .attack import AttackConfig
from .defense import DefenseConfig
from .errors import ConfigurationError
from .model import ToyEncoderConfig, sub_seed

SECTIONS = ("model", "attack", "defense", "harness")


@dataclass(frozen=True)
class HarnessConfig:
    corpus_size: int = 200
    corpus_seed: int = 0
    noise_std: float = 0.02
    batch_size: int = 50
    text_to_image: bool = False
    bench_batch_size: int = 256
    bench_batches: int = 20
    bench_warmup: int = 3

    def __post_init__(self):
        if self.corpus_size < 1 or self.batch_size < 1 or self.bench_batch_size < 1:
            raise ConfigurationError("corpus and batch sizes must be >= 1")
        if self.bench_batches < 1 or self.bench_warmup < 0:
            raise ConfigurationError("bench_batches must be >= 1 and bench_warmup >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "HarnessConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown harness keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExperimentConfig:
    model: ToyEncoderConfig = field(default_factory=ToyEncoderConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            model=ToyEncoderConfig.from_dict(doc.get("model", {})),
            attack=AttackConfig.from_dict(doc.get("attack", {})),
            defense=DefenseConfig.from_dict(doc.get("defense", {})),
            harness=HarnessConfig.from_dict(doc.get("harness", {})),
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "attack": self.attack.to_dict(),
            "defense": self.defense.to_dict(),
            "harness": self.harness.to_dict(),
        }

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Replace every component seed by one derived from ``seed``."""
        return ExperimentConfig(
            model=replace(self.model, seed=sub_seed(seed, "model")),
            attack=replace(self.attack, seed=sub_seed(seed, "attack")),
            defense=self.defense.replace(seed=sub_seed(seed, "defense")),
            harness=replace(self.harness, corpus_seed=sub_seed(seed, "corpus")),
        )


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if len(path) != 2 or path[0] not in SECTIONS:
        raise ConfigurationError(
            f"override key {key!r} must look like <section>.<key>, sections {SECTIONS}"
        )
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = {k: dict(v) for k, v in doc.items()}
    for text in overrides:
        (section, key), value = parse_override(text)
        doc.setdefault(section, {})[key] = value
    return doc


def load_config(path=None, overrides=(), seed=None) -> ExperimentConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
    cfg = ExperimentConfig.from_dict(apply_overrides(doc, overrides))
    if seed is not None:
        cfg = cfg.with_seed(seed)
        # Explicit seed overrides still win over the fan-out.
        cfg = ExperimentConfig.from_dict(apply_overrides(cfg.to_dict(), [
            o for o in overrides if o.split("=", 1)[0].endswith("seed")
        ]))
    return cfg
