"""Contrastive representation learning as mutual-information estimation.

A small float64 autodiff core trains MLP encoders against a family of
softmax-style MI lower bounds; memory banks and restricted negative
sampling (ball / ring / cave pools, neighbor sets, anneal schedules)
realize the harder-contrast variants; synthetic datasets with known
structure make every estimate checkable.

The legacy softmax-hack formulations exist in ``objectives`` for the
stability comparison but are deliberately not re-exported here.
"""

from .autodiff import DomainError, GraphStateError, NonFiniteError, Tensor, logsumexp
from .bank import MemoryBank, rank_by_similarity, weighted_view_encode
from .config import ConfigError, ExperimentConfig, config_hash, config_keys
from .datasets import (GaussianPairFamily, SpiralDataset, analytic_gaussian_mi,
                       make_blobs, make_spirals, sample_gaussian_pairs)
from .estimators import (BatchSample, EstimateError, ScaledDotWitness, estimate_ba,
                         estimate_infonce, estimate_nwj, estimate_uba, estimate_vince,
                         make_witness, mi_estimate_from_loss)
from .nets import MLPEncoder
from .objectives import (check_permutation_invariance, cmc_mi_estimate, loss_cmc,
                         loss_ir_nce, loss_la_nce, loss_simclr, loss_t_disc,
                         loss_view_extended)
from .optim import Adam, SGD, make_optimizer
from .presets import preset, preset_names
from .probes import ProbeResult, knn_probe, logistic_probe
from .runner import RunRecord, emit_metrics, run_experiment
from .samplers import (AnnealSchedule, DegeneratePoolError, NegativeSpec, NeighborSpec,
                       anneal_value, kmeans, sample_close_neighbors, sample_negatives)
from .views import ViewFunction, apply_view

__version__ = "0.1.0"
