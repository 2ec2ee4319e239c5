"""Experiment configuration: nested dataclasses with a flat text format.

Configs serialize to sorted ``section.key = value`` lines and parse back
byte-identically. Unknown keys are errors. The config hash identifies one
experiment variant: it covers every field except the seed list and output
location, so runs of the same variant share a hash across seeds.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .objectives import KAPPA_DEFAULT


class ConfigError(ValueError):
    """A config file, key, or value could not be interpreted."""


@dataclass
class DatasetConfig:
    kind: str = "gaussian"  # gaussian | spiral | blobs
    n_points: int = 2000
    eta: float = 0.0  # additive view-noise level for spiral/blob training views
    n_blobs: int = 4
    blob_dim: int = 16
    blob_spread: float = 0.5
    holdout_fraction: float = 0.2


@dataclass
class EncoderConfig:
    layers: int = 5
    hidden_dim: int = 10
    output_dim: int = 10
    l2_normalize: bool = True


@dataclass
class ObjectiveConfig:
    family: str = "t-disc"  # t-disc | ir-nce | ir-softmax | la-original | la-nce
    omega: float = 0.07
    kappa: float = KAPPA_DEFAULT
    use_memory_bank: bool = True
    legacy: bool = False  # must be set to run the softmax-hack families
    witness: str = "scaled-dot"
    witness_depth: int = 2
    witness_hidden: int = 128


@dataclass
class NegativeConfig:
    kind: str = "marginal"
    outer_percent: float = 100.0
    inner_percent: float = 1.0
    kmeans_k: int = 4
    kmeans_restarts: int = 10
    anneal: bool = False
    anneal_start_percent: float = 100.0
    anneal_end_percent: float = 10.0
    anneal_start_epoch: int = 0
    anneal_end_epoch: int = 0
    anneal_inner: bool = False
    anneal_inner_start_percent: float = 0.0
    anneal_inner_end_percent: float = 1.0


@dataclass
class NeighborConfig:
    kind: str = "none"
    close_percent: float = 1.0
    kmeans_k: int = 4
    anneal: bool = False
    anneal_start_percent: float = 0.0
    anneal_end_percent: float = 1.0
    anneal_start_epoch: int = 0
    anneal_end_epoch: int = 0


@dataclass
class OptimizerConfig:
    kind: str = "adam"  # adam | sgd-momentum
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainingConfig:
    epochs: int = 100
    iterations: int = 0  # overrides epochs when positive
    batch_size: int = 128
    num_negatives: int = 100  # negatives per anchor (the denominator adds the positive)
    num_neighbors: int = 1  # close-neighbor draws beyond the anchor
    alpha: float = 0.5
    bank_renormalize: bool = True
    probe_every: int = 0  # epochs between probe evaluations; 0 = final only
    km_recompute_epochs: int = 1
    anneal_per_step: bool = False


@dataclass
class ExperimentConfig:
    name: str = "custom"
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    sweep_key: str = ""
    sweep_values: tuple = ()
    dump_representations: bool = False
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    negatives: NegativeConfig = field(default_factory=NegativeConfig)
    neighbors: NeighborConfig = field(default_factory=NeighborConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)


_SECTIONS = ("dataset", "encoder", "objective", "negatives", "neighbors",
             "optimizer", "training")
_TOP_KEYS = ("name", "seeds", "out_dir", "sweep_key", "sweep_values",
             "dump_representations")
_HASH_EXCLUDED = ("seeds", "out_dir")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def _coerce(raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ConfigError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw == "":
                return ()
            parts = [p.strip() for p in raw.split(",")]
            if default and all(isinstance(v, int) for v in default):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError as err:
        raise ConfigError(f"cannot parse value {raw!r}: {err}") from err


def config_keys() -> list[str]:
    """Every dotted key accepted in config files and overrides, sorted."""
    keys = list(_TOP_KEYS)
    cfg = ExperimentConfig()
    for section in _SECTIONS:
        for f in fields(getattr(cfg, section)):
            keys.append(f"{section}.{f.name}")
    return sorted(keys)


def get_dotted(config: ExperimentConfig, key: str):
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        sub = getattr(config, section)
        if not hasattr(sub, name):
            raise ConfigError(f"unknown config key {key!r}")
        return getattr(sub, name)
    if key not in _TOP_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    return getattr(config, key)


def apply_dotted(config: ExperimentConfig, key: str, raw_value: str) -> None:
    """Assign one ``section.key = value`` pair, coercing to the field type."""
    if key == "negatives.style":
        _apply_style(config, raw_value.strip())
        return
    current = get_dotted(config, key)
    value = _coerce(raw_value, current)
    if "." in key:
        section, name = key.split(".", 1)
        setattr(getattr(config, section), name, value)
    else:
        setattr(config, key, value)


def _apply_style(config: ExperimentConfig, style: str) -> None:
    """Virtual key bundling a negative-sampling style into concrete fields.

    Styles: marginal, ball, ring, cave, ball-anneal. The annealed style
    ramps the outer percent from 100 down to the configured outer percent
    over the first half of training.
    """
    neg = config.negatives
    if style in ("marginal", "ball", "ring", "cave"):
        neg.kind = style
        neg.anneal = False
        return
    if style == "ball-anneal":
        neg.kind = "ball"
        neg.anneal = True
        neg.anneal_start_percent = 100.0
        neg.anneal_end_percent = neg.outer_percent
        neg.anneal_start_epoch = 0
        neg.anneal_end_epoch = max(1, config.training.epochs // 2)
        return
    raise ConfigError(f"unknown negative style {style!r}")


def to_text(config: ExperimentConfig) -> str:
    """Flat dotted-key serialization, keys sorted, one pair per line."""
    lines = []
    for key in _TOP_KEYS:
        lines.append(f"{key} = {_format_value(getattr(config, key))}")
    for section in _SECTIONS:
        sub = getattr(config, section)
        for f in fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def from_text(text: str) -> ExperimentConfig:
    config = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        apply_dotted(config, key.strip(), raw)
    return config


def load(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return from_text(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err


def config_hash(config: ExperimentConfig) -> str:
    """Twelve hex chars identifying the variant (seed list excluded)."""
    lines = [ln for ln in to_text(config).splitlines()
             if ln.split(" = ")[0] not in _HASH_EXCLUDED]
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:12]


def validate(config: ExperimentConfig) -> None:
    """Reject inconsistent configs before any compute happens."""
    if config.objective.family not in ("t-disc", "ir-nce", "ir-softmax",
                                       "la-original", "la-nce"):
        raise ConfigError(f"unknown objective family {config.objective.family!r}")
    if config.objective.family in ("ir-softmax", "la-original") and not config.objective.legacy:
        raise ConfigError(
            f"family {config.objective.family!r} is a legacy softmax-hack path; "
            "set objective.legacy = true to run it")
    if config.objective.family == "ir-nce":
        if config.negatives.kind != "marginal" or config.neighbors.kind != "none":
            raise ConfigError("ir-nce is defined with marginal negatives and no neighbors")
    if config.objective.family == "ir-softmax" and config.negatives.kind != "marginal":
        raise ConfigError("ir-softmax draws its negatives from the marginal")
    if config.objective.omega <= 0:
        raise ConfigError("objective.omega must be positive")
    if config.objective.kappa <= 0:
        raise ConfigError("objective.kappa must be positive")
    if config.training.batch_size < 1 or config.training.num_negatives < 1:
        raise ConfigError("batch_size and num_negatives must be at least 1")
    if not 0.0 <= config.training.alpha < 1.0:
        raise ConfigError("training.alpha must lie in [0, 1)")
    if config.dataset.kind not in ("gaussian", "spiral", "blobs"):
        raise ConfigError(f"unknown dataset kind {config.dataset.kind!r}")
    if config.dataset.kind == "gaussian" and not config.objective.use_memory_bank:
        raise ConfigError("the paired-gaussian loop estimates against a bank; "
                          "objective.use_memory_bank must stay true")
    if config.sweep_key and not config.sweep_values:
        raise ConfigError("sweep_key set but sweep_values is empty")


def expand_sweep(config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """All variant configs of a sweep as (value label, config) pairs.

    Without a sweep this is a single pair labelled by the experiment name.
    """
    if not config.sweep_key:
        return [("", _clone(config))]
    variants = []
    for raw in config.sweep_values:
        variant = _clone(config)
        apply_dotted(variant, config.sweep_key, str(raw))
        variant.sweep_key = config.sweep_key
        variant.sweep_values = (str(raw),)
        variants.append((str(raw), variant))
    return variants


def _clone(config: ExperimentConfig) -> ExperimentConfig:
    return from_text(to_text(config))
