from .io import load_model, save_model
from .model import (
    HiddenState,
    SbmArchitecture,
    SbmParams,
    cond_h1,
    cond_h2,
    cond_v,
    exact_log_partition,
    exact_log_prob,
    exact_visible_marginals,
    expand_tiled_weights,
    mean_field_infer,
    sample_shapes,
    sbm_energy,
    shape_linear_term,
)
from .train import (
    SbmTrainingConfig,
    joint_train,
    pretrain_layer1,
    pretrain_layer2,
    reconstruction_error,
    train_sbm,
)

__all__ = [
    "HiddenState", "SbmArchitecture", "SbmParams", "SbmTrainingConfig",
    "cond_h1", "cond_h2", "cond_v", "exact_log_partition", "exact_log_prob", "exact_visible_marginals",
    "expand_tiled_weights", "joint_train", "load_model", "mean_field_infer",
    "pretrain_layer1", "pretrain_layer2", "reconstruction_error", "sample_shapes",
    "save_model", "sbm_energy", "shape_linear_term", "train_sbm",
]
