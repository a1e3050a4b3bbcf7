"""Desk-scale unrolled adversarial reconstruction for dynamic multi-coil MRI."""

from .numerics import Rng, fft2c, ifft2c
from .sampling import SamplingMask, Trajectory, make_mask
from .phantom import make_dynamic_phantom, simulate_coils
from .dataset import Dataset, gen_dataset, load_dataset
from .mri import KSpaceVolume, SensitivityMaps
from .unroll import Generator, GeneratorConfig, PatchDiscriminator, generator_forward
from .trainer import TrainConfig, TrainState, evaluate, train_run

__version__ = "0.1.0"

__all__ = [
    "Rng", "fft2c", "ifft2c",
    "SamplingMask", "Trajectory", "make_mask",
    "make_dynamic_phantom", "simulate_coils",
    "Dataset", "gen_dataset", "load_dataset",
    "KSpaceVolume", "SensitivityMaps",
    "Generator", "GeneratorConfig", "PatchDiscriminator", "generator_forward",
    "TrainConfig", "TrainState", "evaluate", "train_run",
    "__version__",
]
