"""Bayesian pseudo-coresets by contrastive divergence.

Real-data training trajectories stand in for the parameter posterior of the
full dataset; Langevin chains on the synthetic set sample its energy-based
posterior; the synthetic inputs are moved to shrink the energy gap between the
two samples.
"""

from .coreset import SyntheticSet, init_coreset, load_coreset, save_coreset
from .data import LabeledDataset, downsample, gen_blobs, load_idx, normalize_dataset
from .distill import DistillConfig, cd_loss, distill, distill_step
from .energy import EnergySpec, energy, energy_grad_inputs, energy_grad_params
from .estimators import NetClassifier, PseudoCoresetDistiller
from .evaluate import (EvalReport, cross_architecture_grid, cross_loss_grid, evaluate_coreset,
                       random_baseline)
from .langevin import LangevinConfig, langevin_sample
from .models import ModelSpec, ParamVector, forward, init_params
from .trajectory import Buffer, TrainConfig, Trajectory, record_trajectory, sample_anchor

__version__ = "0.1.0"
