"""Shared trained-model fixtures.

Training is deterministic, so every test session reproduces the same two
checkpoints: a small unconditional MLP on a 2-D Gaussian target and the
two-stream transformer on the two-factor prompted dataset.
"""

import pytest

from flowinv.minidit import MiniDiTArch
from flowinv.training import TrainConfig, make_dataset, train_field

MLP_ARCH = {"type": "mlp", "data_dim": 2, "hidden": 64, "d_time": 32}
MLP_DATASET = {"kind": "gaussian", "params": {"mu": [2.0, 2.0], "s": 0.5}, "seed": 7}
MLP_TRAIN = TrainConfig(batch_size=128, steps=5000, lr=1e-3, optimizer="adam", seed=3)

DIT_ARCH = MiniDiTArch().to_dict()
DIT_DATASET = {"kind": "two_factor", "params": {"std": 0.1}, "seed": 11}
DIT_TRAIN = TrainConfig(batch_size=128, steps=5000, lr=1e-3, optimizer="adam", seed=6)


@pytest.fixture(scope="session")
def mlp_checkpoint():
    data = make_dataset(MLP_DATASET["kind"], MLP_DATASET["params"], MLP_DATASET["seed"])
    ckpt, curve = train_field(MLP_ARCH, MLP_TRAIN, data)
    return ckpt


@pytest.fixture(scope="session")
def dit_checkpoint():
    data = make_dataset(DIT_DATASET["kind"], DIT_DATASET["params"], DIT_DATASET["seed"])
    ckpt, curve = train_field(DIT_ARCH, DIT_TRAIN, data)
    return ckpt
