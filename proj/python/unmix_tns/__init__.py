"""Test-time normalization simulator: UnMix-TNS and baseline normalizers."""

from ._core import (
    Checkpoint,
    SourceStats,
    UnMixState,
    alpha_bn_forward,
    assignment_probs,
    batch_stats,
    cosine_sim,
    dirichlet_order,
    init_unmix,
    instance_stats,
    load_checkpoint,
    mixture_moments,
    momentum_lambda,
    run_experiment,
    source_bn_forward,
    tbn_forward,
    train_source,
    unmix_forward,
)

__all__ = [
    "Checkpoint",
    "SourceStats",
    "UnMixState",
    "alpha_bn_forward",
    "assignment_probs",
    "batch_stats",
    "cosine_sim",
    "dirichlet_order",
    "init_unmix",
    "instance_stats",
    "load_checkpoint",
    "mixture_moments",
    "momentum_lambda",
    "run_experiment",
    "source_bn_forward",
    "tbn_forward",
    "train_source",
    "unmix_forward",
]
