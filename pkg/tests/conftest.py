"""Shared fixtures. The trained-solver fixtures are session-scoped because
several acceptance criteria reuse the same surrogate and transfer solvers.
"""

import numpy as np
import pytest

from rtcaptcha import TrainConfig, build_model, train
from rtcaptcha.generate import GenerationConfig, generate_dataset

TRAIN_SEED = 7
TEST_SEED = 1007
N_TRAIN = 2200
N_EVAL = 330


@pytest.fixture(scope="session")
def clean_train_ds():
    return generate_dataset(N_TRAIN, GenerationConfig(mode="clean"), seed=TRAIN_SEED, split="train")


@pytest.fixture(scope="session")
def clean_eval_ds():
    return generate_dataset(N_EVAL, GenerationConfig(mode="clean"), seed=TEST_SEED, split="test")


@pytest.fixture(scope="session")
def pseudo_eval_ds():
    return generate_dataset(N_EVAL, GenerationConfig(mode="pseudo"), seed=TEST_SEED, split="test")


def _fit(arch, ds, epochs, seed=0, lr=0.01):
    model = build_model(arch, seed=seed)
    model, history = train(model, ds, TrainConfig(epochs=epochs, batch_size=32, learning_rate=lr,
                                                  momentum=0.9, seed=seed))
    model.train_history = history
    return model


@pytest.fixture(scope="session")
def surrogate_vgg(clean_train_ds):
    return _fit("tiny_vgg", clean_train_ds, epochs=20)


@pytest.fixture(scope="session")
def solver_lenet(clean_train_ds):
    return _fit("tiny_lenet", clean_train_ds, epochs=25, seed=1)


@pytest.fixture(scope="session")
def solver_dense(clean_train_ds):
    return _fit("tiny_dense", clean_train_ds, epochs=20, seed=2)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
