"""Generative pedestrian trajectory prediction with bearing-angle attention
pooling and a learned latent variable predictor."""

from .data import (ObservationWindow, SplitSpec, TrajectoryScene, leave_one_out_split, load_dataset,
                   make_windows, resample_interpolate, synth_generate)
from .evaluation import ade, best_of_k_eval, constant_velocity_baseline, density_map, fde, sampling_sweep
from .losses import LossWeights, adversarial_losses, kl_loss, total_loss, variety_loss
from .model import ModelConfig, TPPOParams, build_params, generator_forward
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ObservationWindow", "SplitSpec", "TrajectoryScene", "leave_one_out_split", "load_dataset", "make_windows",
    "resample_interpolate", "synth_generate",
    "ade", "best_of_k_eval", "constant_velocity_baseline", "density_map", "fde", "sampling_sweep",
    "LossWeights", "adversarial_losses", "kl_loss", "total_loss", "variety_loss",
    "ModelConfig", "TPPOParams", "build_params", "generator_forward",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
