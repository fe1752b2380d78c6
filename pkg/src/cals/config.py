"""Experiment configuration: flat ``section.key = value`` text files.

Each non-blank line that does not start with ``#`` holds one assignment.
Values are JSON literals (numbers, ``true``/``false``, quoted strings, lists);
a bare word is read as a string, so ``training.loss = cals_alm`` works.
Omitted keys take their defaults, unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import metrics
from .data import SplitDataset, balanced_holdout, gaussian_mixture, long_tailed_counts, split
from .losses import LossKind, LossSelection
from .penalties import PenaltyKind
from .trainer import TrainConfig


class ConfigError(Exception):
    """Base class for configuration problems (CLI exit code 2)."""


class ConfigFileError(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class UnknownKeyError(ConfigError):
    def __init__(self, key):
        super().__init__(f"unknown key {key!r}")
        self.key = key


class ConfigDomainError(ConfigError):
    def __init__(self, key, expected, value):
        super().__init__(f"{key}: expected {expected}, got {value!r}")
        self.key = key
        self.expected = expected


def _opt(default, check=None, domain=None, choices=None, item=None):
    meta = {"check": check, "domain": domain, "choices": choices, "item": item}
    if isinstance(default, list):
        return field(default_factory=lambda: list(default), metadata=meta)
    return field(default=default, metadata=meta)


_pos = (lambda v: v > 0, "a positive number")
_nonneg = (lambda v: v >= 0, "a non-negative number")
_posint = (lambda v: v >= 1, "an integer >= 1")


@dataclass
class DatasetSection:
    kind: str = _opt("gaussian", choices=("gaussian", "longtail"))
    num_classes: int = _opt(8, lambda v: v >= 2, "an integer >= 2")
    samples_per_class: int = _opt(150, *_posint)
    max_count: int = _opt(256, *_posint)
    imbalance_ratio: float = _opt(51.2, lambda v: v >= 1, "a number >= 1")
    dim: int = _opt(16, *_posint)
    separation: float = _opt(3.0, *_pos)
    sigma: float = _opt(1.0, *_pos)
    balanced_validation: bool = _opt(True)
    val_per_class: int = _opt(20, *_posint)
    test_per_class: int = _opt(100, *_posint)
    fractions: list = _opt([0.6, 0.2, 0.2],
                           lambda v: len(v) == 3 and all(x >= 0 for x in v) and abs(sum(v) - 1) < 1e-9,
                           "three non-negative fractions summing to 1", item=float)
    stratified: bool = _opt(True)
    seed: int = _opt(0, *_nonneg)


@dataclass
class ModelSection:
    hidden: list = _opt([64], lambda v: all(w >= 1 for w in v), "a list of positive widths", item=int)


@dataclass
class TrainingSection:
    loss: str = _opt("cals_alm", choices=tuple(k.value for k in LossKind))
    smoothing_alpha: float = _opt(0.05, lambda v: 0 <= v < 1, "a number in [0, 1)")
    focal_gamma: float = _opt(3.0, *_nonneg)
    ecp_weight: float = _opt(0.1, *_nonneg)
    mbls_weight: float = _opt(0.1, *_nonneg)
    margin: float = _opt(10.0, *_pos)
    epochs: int = _opt(60, *_nonneg)
    batch_size: int = _opt(32, *_posint)
    step_size: float = _opt(0.05, *_nonneg)
    momentum: float = _opt(0.9, lambda v: 0 <= v < 1, "a number in [0, 1)")
    penalty: str = _opt("phr", choices=tuple(k.value for k in PenaltyKind))
    initial_lambda: float = _opt(1e-6, *_pos)
    initial_rho: float = _opt(1.0, *_pos)
    gamma: float = _opt(1.2, lambda v: v > 1, "a number > 1")
    tau: float = _opt(0.9, lambda v: 0 < v < 1, "a number in (0, 1)")
    rho_update_period: int = _opt(10, *_posint)
    safeguard_lo: float = _opt(1e-6, *_pos)
    safeguard_hi: float = _opt(1e6, *_pos)
    hr_mu: float = _opt(1.1, lambda v: v > 1, "a number > 1")
    hr_tau: float = _opt(1.1, lambda v: v > 1, "a number > 1")
    seed: int = _opt(0, *_nonneg)


@dataclass
class EvaluationSection:
    ece_bins: int = _opt(metrics.DEFAULT_ECE_BINS, *_posint)
    reliability_bins: int = _opt(metrics.DEFAULT_RELIABILITY_BINS, *_posint)
    temperature_grid: list = _opt(list(metrics.DEFAULT_TEMPERATURE_GRID),
                                  lambda v: len(v) > 0 and all(t > 0 for t in v),
                                  "a non-empty list of positive temperatures", item=float)


@dataclass
class OutputSection:
    dir: str = _opt("")
    save_checkpoint: bool = _opt(True)


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output: OutputSection = field(default_factory=OutputSection)

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(
            loss=LossSelection(kind=t.loss, smoothing_alpha=t.smoothing_alpha, focal_gamma=t.focal_gamma,
                               ecp_weight=t.ecp_weight, mbls_weight=t.mbls_weight, margin_m=t.margin),
            epochs=t.epochs, batch_size=t.batch_size, step_size=t.step_size, momentum=t.momentum,
            penalty_kind=t.penalty, initial_lambda=t.initial_lambda, initial_rho=t.initial_rho,
            gamma=t.gamma, improvement_tau=t.tau, rho_update_period=t.rho_update_period,
            safeguard_lo=t.safeguard_lo, safeguard_hi=t.safeguard_hi, hr_mu=t.hr_mu, hr_tau=t.hr_tau,
            seed=t.seed,
        )


_SECTION_CLASSES = {
    "dataset": DatasetSection, "model": ModelSection, "training": TrainingSection,
    "evaluation": EvaluationSection, "output": OutputSection,
}


def _field_spec(key: str) -> tuple[str, dataclasses.Field]:
    section, _, name = key.partition(".")
    cls = _SECTION_CLASSES.get(section)
    if cls is None or not name:
        raise UnknownKeyError(key)
    for f in dataclasses.fields(cls):
        if f.name == name:
            return section, f
    raise UnknownKeyError(key)


def all_keys() -> list[str]:
    return [f"{s}.{f.name}" for s, cls in _SECTION_CLASSES.items() for f in dataclasses.fields(cls)]


def _decode(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text.startswith(("[", "{", '"')):
            raise
        return text


def _coerce(key: str, f: dataclasses.Field, raw: Any) -> Any:
    meta = f.metadata
    typ = f.type
    if typ in ("bool", bool):
        if not isinstance(raw, bool):
            raise ConfigDomainError(key, "true or false", raw)
        value = raw
    elif typ in ("int", int):
        if (isinstance(raw, bool) or not isinstance(raw, (int, float)) or not np.isfinite(raw)
                or float(raw) != int(raw)):
            raise ConfigDomainError(key, "an integer", raw)
        value = int(raw)
    elif typ in ("float", float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigDomainError(key, "a number", raw)
        value = float(raw)
        if not np.isfinite(value):
            raise ConfigDomainError(key, "a finite number", raw)
    elif typ in ("str", str):
        if not isinstance(raw, str):
            raise ConfigDomainError(key, "a string", raw)
        value = raw.lower() if meta.get("choices") else raw
    else:  # list
        item = meta.get("item") or float
        ok = isinstance(raw, list) and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)
            and (item is float or float(x) == int(x))
            for x in raw)
        if not ok:
            raise ConfigDomainError(key, meta.get("domain") or "a list of numbers", raw)
        value = [item(x) for x in raw]
    choices = meta.get("choices")
    if choices and value not in choices:
        raise ConfigDomainError(key, "one of " + ", ".join(choices), raw)
    check = meta.get("check")
    if check is not None and not check(value):
        raise ConfigDomainError(key, meta.get("domain"), raw)
    return value


def _set(config: ExperimentConfig, key: str, raw: Any) -> None:
    section, f = _field_spec(key)
    setattr(getattr(config, section), f.name, _coerce(key, f, raw))


def _validate(config: ExperimentConfig) -> ExperimentConfig:
    t = config.training
    if t.safeguard_hi < t.safeguard_lo:
        raise ConfigDomainError("training.safeguard_hi", "a value >= training.safeguard_lo", t.safeguard_hi)
    d = config.dataset
    if d.kind == "longtail" and d.num_classes < 2:
        raise ConfigDomainError("dataset.num_classes", "an integer >= 2", d.num_classes)
    if not d.balanced_validation and LossKind(t.loss).is_cals and d.fractions[1] == 0:
        raise ConfigDomainError("dataset.fractions", "a positive validation fraction for CALS losses",
                                d.fractions)
    return config


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse configuration text, then apply ``overrides`` (key -> raw value)."""
    config = ExperimentConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigSyntaxError(f"expected 'section.key = value', got {stripped!r}", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not value.strip():
            raise ConfigSyntaxError(f"missing value for {key!r}", lineno)
        if key in seen:
            raise ConfigSyntaxError(f"duplicate key {key!r}", lineno)
        seen.add(key)
        try:
            raw = _decode(value)
        except json.JSONDecodeError as exc:
            raise ConfigSyntaxError(f"cannot parse value for {key!r}: {exc.msg}", lineno) from None
        _set(config, key, raw)
    for key, raw in (overrides or {}).items():
        _set(config, key, _decode(raw) if isinstance(raw, str) else raw)
    return _validate(config)


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigFileError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigFileError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, overrides)


def parse_assignment(text: str) -> tuple[str, str]:
    """Split a ``key=value`` command-line override."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigSyntaxError(f"override must look like key=value, got {text!r}")
    return key.strip(), value.strip()


def serialize_config(config: ExperimentConfig) -> str:
    lines = []
    for section in _SECTION_CLASSES:
        obj = getattr(config, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {json.dumps(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


PRESET_DIR = Path(__file__).with_name("presets")


def preset_path(name: str) -> Path:
    return PRESET_DIR / f"{name}.cfg"


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


def resolve_config_path(name_or_path) -> Path:
    """Accept a config path or the name of a bundled preset."""
    path = Path(name_or_path)
    if path.exists():
        return path
    candidate = preset_path(str(name_or_path))
    return candidate if candidate.exists() else path


def build_dataset(section: DatasetSection) -> SplitDataset:
    k = section.num_classes
    if section.kind == "longtail":
        counts = long_tailed_counts(k, section.max_count, section.imbalance_ratio)
    else:
        counts = np.full(k, section.samples_per_class, dtype=np.int64)
    if section.balanced_validation:
        counts = counts + section.val_per_class + section.test_per_class
        pool = gaussian_mixture(k, counts, section.dim, section.separation, section.sigma, section.seed)
        return balanced_holdout(pool, section.val_per_class, section.test_per_class, seed=[section.seed, 1])
    pool = gaussian_mixture(k, counts, section.dim, section.separation, section.sigma, section.seed)
    return split(pool, section.fractions, section.stratified, seed=[section.seed, 1])
