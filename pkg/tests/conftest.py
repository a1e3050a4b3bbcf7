"""Shared fixtures: a tiny on-disk dataset and small train/model configs.

Everything here is sized for speed (32x32, 2 coils, 2 unrolled stages) so
the unit suites stay fast; the acceptance suite builds its own full-size
dataset.
"""

import pytest
import torch

from genrecmr.dataset import DatasetHeader, gen_dataset, load_dataset
from genrecmr.trainer import TrainConfig
from genrecmr.unroll import GeneratorConfig

TINY = dict(h=32, w=32, frames=5, coils=2, domains=2, samples_per_domain=2,
            adjacent=3, acs_lines=8, seed=7)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_ds")
    gen_dataset(root, DatasetHeader(**TINY))
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)


def tiny_gen_cfg(**overrides) -> GeneratorConfig:
    base = dict(unrolls=2, base_channels=4, prompt_channels=4,
                adjacent=TINY["adjacent"], acs_lines=TINY["acs_lines"],
                coils=TINY["coils"], dtype=torch.float64)
    base.update(overrides)
    return GeneratorConfig(**base)


def tiny_train_cfg(**overrides) -> TrainConfig:
    base = dict(epochs=2, accelerations=(2, 4), trajectories=("uniform", "gaussian"),
                seed=3, cov_window=10, sda_window=4, eval_at_end=False)
    base.update(overrides)
    return TrainConfig(**base)
