"""Decoder BCD: Bayesian causal discovery of a latent linear-Gaussian SCM
observed through a linear projection."""

from .kernels import BACKEND
from .graph_scm import (
    GroundTruthScm,
    assemble_weighted_adjacency,
    pack_free_entries,
    sample_er_dag,
    unpack_free_entries,
    validate_dag,
)
from .sampler import (
    Dataset,
    FixedValue,
    GaussianJoint,
    InterventionSpec,
    UniformValue,
    ancestral_sample,
    generate_dataset,
    mutate_for_intervention,
    observational_joint,
    project,
)
from .posterior import PosteriorParams, PosteriorSample, decode, forward, init_posterior, sample_posterior
from .objective import LossBreakdown, gaussian_kl, mse_loss, supervised_kl, total_loss
from .gradients import GradReport, check_gradients, grad_total_loss, optimizer_step
from .metrics import MetricsRecord, edge_auroc, expected_shd, kl_true_learned, mse_edge_matrix, shd
from .experiment import ExperimentConfig, RunResult, preset, run_suite, run_training, sweep_interventional

__version__ = "0.1.0"
