import numpy as np
import pytest

from gf2.config import Config
from gf2.toydata import make_scenes, scenes_to_dataset
from gf2.trainer import Trainer, build_models


def tiny_config(**train_overrides) -> Config:
    """16x16 micro setup used by the fast tests."""
    cfg = Config()
    cfg.data.resolution = 16
    cfg.data.size_min = 2
    cfg.data.size_max = 4
    cfg.data.n_min = 1
    cfg.data.n_max = 2
    cfg.model.resolution = 16
    cfg.model.k_max = 4
    cfg.model.steps = 2
    cfg.model.d_z = 12
    cfg.model.d_u = 12
    cfg.model.d_w = 12
    cfg.model.att_dim = 12
    cfg.model.depth_head_dim = 8
    cfg.model.planner_channels = [12, 12, 8]
    cfg.model.executor_channels = [12, 12, 8]
    cfg.model.disc_channels = [8, 12, 12]
    cfg.model.mapping_layers = 3
    cfg.model.mapping_lr_mul = 0.1
    cfg.train.batch = 2
    cfg.train.log_every = 5
    for key, value in train_overrides.items():
        setattr(cfg.train, key, value)
    return cfg


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def micro_models(tiny_cfg):
    return build_models(tiny_cfg)


@pytest.fixture(scope="session")
def micro_dataset(tiny_cfg):
    scenes = make_scenes(tiny_cfg.data, 24, seed=9)
    return scenes_to_dataset(scenes, tiny_cfg.model.k_max)


@pytest.fixture(scope="session")
def micro_ckpt(tmp_path_factory, micro_dataset):
    """A briefly-trained checkpoint for CLI/service determinism tests."""
    cfg = tiny_config(steps_plan=4, steps_exec=4, steps_joint=3, seed=17)
    out = tmp_path_factory.mktemp("micro_run")
    trainer = Trainer(cfg, micro_dataset, out)
    path = trainer.run_pipeline()
    return path
