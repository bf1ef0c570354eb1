import dataclasses

import pytest
import torch

from sceneshift.config import ModelConfig, SceneConfig, TrainConfig
from sceneshift.scenes import generate_scene

torch.set_num_threads(1)


TINY_MODEL = ModelConfig(
    feat_dim=16,
    latent_dim=4,
    context_dim=8,
    gcn_iters=2,
    gen_dim=8,
    refiner_blocks=1,
    disc_dim=4,
    traj_dims=(4, 8, 16),
    dec_dims=(16, 12, 8, 6),
)

TINY_SCENE = SceneConfig(height=32, width=32, n_objects=2, T=3, size_range=(5, 8))


def tiny_train_config(**overrides) -> TrainConfig:
    base = TrainConfig(
        batch_size=1,
        steps=3,
        scene=TINY_SCENE,
        model=TINY_MODEL,
        log_every=1000,
        checkpoint_every=0,
    )
    return dataclasses.replace(base, **overrides)


@pytest.fixture(scope="session")
def default_scene():
    return generate_scene(SceneConfig(), seed=11)


@pytest.fixture(scope="session")
def tiny_scene():
    return generate_scene(TINY_SCENE, seed=5)


@pytest.fixture(scope="session")
def scene_batch():
    cfg = SceneConfig()
    return [generate_scene(cfg, seed=100 + i) for i in range(5)]
