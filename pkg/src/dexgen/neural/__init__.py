"""Numpy networks, point descriptors, prediction heads and joint training."""

from .descriptor import (FEATURE_DIM, covariance_eigenvalues, descriptors, local_descriptor,
                         roll_matrix, rotate_descriptor)
from .heads import Denoiser, GraspModel, GraspnessHead, JointHead, sinusoidal_embed
from .losses import cross_entropy, mse, smooth_l1
from .mlp import (AdamState, Mlp, adam_step, load_checkpoint, mish, mlp_backward, mlp_forward,
                  save_checkpoint)
from .training import (LOSS_COLUMNS, SceneGrasp, TrainingConfig, TrainingDivergence,
                       TrainingResult, TrainingScene, augment_rotation, cosine_lr, loss_and_grads,
                       prepare_scene, rebalanced_sample, train_loop, write_loss_csv)

__all__ = [
    "FEATURE_DIM", "covariance_eigenvalues", "descriptors", "local_descriptor", "roll_matrix",
    "rotate_descriptor", "Denoiser", "GraspModel", "GraspnessHead", "JointHead",
    "sinusoidal_embed", "cross_entropy", "mse", "smooth_l1", "AdamState", "Mlp", "adam_step",
    "load_checkpoint", "mish", "mlp_backward", "mlp_forward", "save_checkpoint", "LOSS_COLUMNS",
    "SceneGrasp", "TrainingConfig", "TrainingDivergence", "TrainingResult", "TrainingScene",
    "augment_rotation", "cosine_lr", "loss_and_grads", "prepare_scene", "rebalanced_sample",
    "train_loop", "write_loss_csv",
]
