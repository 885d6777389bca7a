from .ddpm import (
    DdpmCheckpoint,
    DdpmTrainConfig,
    evaluate_translation,
    noise_prediction_loss,
    reverse_step,
    sample_conditional,
    sample_conditional_batch,
    train_ddpm,
)
from .schedule import NoiseSchedule, forward_noise, scaled_linear_schedule
from .unet import ConditionalUNet3D, DenoiserSpec, build_denoiser

__all__ = [
    "ConditionalUNet3D", "DdpmCheckpoint", "DdpmTrainConfig", "DenoiserSpec", "NoiseSchedule",
    "build_denoiser", "evaluate_translation", "forward_noise", "noise_prediction_loss",
    "reverse_step", "sample_conditional", "sample_conditional_batch", "scaled_linear_schedule",
    "train_ddpm",
]
