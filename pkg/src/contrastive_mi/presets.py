"""Named experiment presets with appendix-faithful defaults."""

from __future__ import annotations

from .config import ConfigError, ExperimentConfig, apply_dotted


def _gaussian_mi() -> ExperimentConfig:
    cfg = ExperimentConfig(name="gaussian-mi")
    cfg.dataset.kind = "gaussian"
    cfg.dataset.n_points = 2000
    cfg.encoder.layers = 5
    cfg.encoder.hidden_dim = 10
    cfg.encoder.output_dim = 10
    cfg.encoder.l2_normalize = True
    cfg.objective.family = "t-disc"
    cfg.objective.omega = 0.07
    cfg.optimizer.kind = "adam"
    cfg.optimizer.lr = 0.03
    cfg.optimizer.weight_decay = 0.0
    cfg.training.epochs = 100
    cfg.training.batch_size = 128
    cfg.training.num_negatives = 100
    cfg.training.alpha = 0.5
    cfg.negatives.kind = "ball"
    cfg.sweep_key = "negatives.outer_percent"
    cfg.sweep_values = ("100", "90", "75", "50", "25", "10", "5")
    cfg.seeds = (0, 1, 2, 3, 4)
    return cfg


def _spiral_sweep() -> ExperimentConfig:
    cfg = ExperimentConfig(name="spiral-sweep")
    cfg.dataset.kind = "spiral"
    cfg.dataset.n_points = 10000
    cfg.encoder.layers = 5
    cfg.encoder.hidden_dim = 128
    cfg.encoder.output_dim = 2
    cfg.encoder.l2_normalize = True
    cfg.objective.family = "t-disc"
    cfg.objective.omega = 0.07
    cfg.optimizer.kind = "sgd-momentum"
    cfg.optimizer.lr = 0.03
    cfg.optimizer.momentum = 0.9
    cfg.optimizer.weight_decay = 1e-5
    cfg.training.iterations = 10000
    cfg.training.batch_size = 128
    cfg.training.num_negatives = 4096
    cfg.training.alpha = 0.5
    cfg.negatives.kind = "marginal"
    cfg.sweep_key = "dataset.eta"
    cfg.sweep_values = ("0", "0.1", "0.2", "0.4", "1", "2", "5")
    cfg.seeds = (0, 1, 2)
    cfg.dump_representations = True
    return cfg


def _alpha_sweep() -> ExperimentConfig:
    cfg = _spiral_sweep()
    cfg.name = "alpha-sweep"
    cfg.dataset.n_points = 2000
    cfg.dataset.eta = 0.4
    cfg.training.iterations = 2000
    cfg.training.num_negatives = 512
    cfg.training.probe_every = 20
    cfg.sweep_key = "training.alpha"
    cfg.sweep_values = ("0", "0.25", "0.5", "0.9", "0.99")
    cfg.dump_representations = False
    return cfg


def _stability_compare() -> ExperimentConfig:
    cfg = ExperimentConfig(name="stability-compare")
    cfg.dataset.kind = "blobs"
    cfg.dataset.n_points = 400
    cfg.dataset.n_blobs = 4
    cfg.dataset.blob_dim = 16
    cfg.dataset.eta = 0.5
    cfg.encoder.layers = 3
    cfg.encoder.hidden_dim = 32
    cfg.encoder.output_dim = 8
    cfg.objective.legacy = True
    cfg.optimizer.kind = "sgd-momentum"
    cfg.optimizer.lr = 0.03
    cfg.optimizer.weight_decay = 1e-5
    cfg.training.epochs = 30
    cfg.training.batch_size = 64
    cfg.training.num_negatives = 64
    cfg.training.alpha = 0.5
    cfg.training.probe_every = 5
    cfg.sweep_key = "objective.family"
    cfg.sweep_values = ("ir-softmax", "ir-nce")
    cfg.seeds = (0, 1, 2)
    return cfg


def _witness_ablation() -> ExperimentConfig:
    cfg = _gaussian_mi()
    cfg.name = "witness-ablation"
    cfg.training.epochs = 30
    cfg.negatives.kind = "marginal"
    cfg.sweep_key = "objective.witness"
    cfg.sweep_values = ("dot", "scaled-dot", "bilinear", "concat-linear", "concat-mlp")
    cfg.seeds = (0, 1)
    return cfg


def _cifar_style_toy() -> ExperimentConfig:
    cfg = ExperimentConfig(name="cifar-style-toy")
    cfg.dataset.kind = "blobs"
    cfg.dataset.n_points = 400
    cfg.dataset.n_blobs = 4
    cfg.dataset.blob_dim = 16
    cfg.dataset.blob_spread = 0.6
    cfg.dataset.eta = 0.5
    cfg.encoder.layers = 3
    cfg.encoder.hidden_dim = 32
    cfg.encoder.output_dim = 8
    cfg.optimizer.kind = "sgd-momentum"
    cfg.optimizer.lr = 0.03
    cfg.optimizer.weight_decay = 1e-5
    cfg.training.epochs = 40
    cfg.training.batch_size = 64
    cfg.training.num_negatives = 64
    cfg.training.alpha = 0.5
    cfg.negatives.outer_percent = 30.0
    cfg.negatives.inner_percent = 2.0
    cfg.negatives.kmeans_k = 4
    cfg.neighbors.kmeans_k = 4
    cfg.sweep_key = "negatives.style"
    cfg.sweep_values = ("marginal", "ball", "ring", "ball-anneal", "cave")
    cfg.seeds = (0, 1, 2)
    return cfg


_PRESETS = {
    "gaussian-mi": _gaussian_mi,
    "spiral-sweep": _spiral_sweep,
    "alpha-sweep": _alpha_sweep,
    "stability-compare": _stability_compare,
    "witness-ablation": _witness_ablation,
    "cifar-style-toy": _cifar_style_toy,
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str, overrides: dict | None = None) -> ExperimentConfig:
    """Fetch a preset by name, optionally applying dotted-key overrides."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    cfg = _PRESETS[name]()
    for key, value in (overrides or {}).items():
        apply_dotted(cfg, key, str(value))
    return cfg
