"""Spectral recovery of latent communities in additive-covariate block models."""

from .harness import ExperimentConfig, misclassification, run_experiment, summarize
from .model import (LinkFunction, ModelSpec, SparsitySchedule, SubcommunityIndex,
                    boxplus, build_tilde_B, canonical_positions, subcommunity_index,
                    subcommunity_unindex, validate_spec)
from .pipeline import (estimate_block_matrix, estimated_positions, fit, reconcile_labels,
                       match_to_reference, recover_coefficients)
from .sampler import Network, NodeAttributes, sample_attributes, sample_network

__version__ = "0.1.0"
