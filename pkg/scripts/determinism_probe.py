"""Run a small paired pipeline end to end and emit checkpoints + renders.

The acceptance suite launches this twice in separate single-threaded
processes and compares every artifact byte for byte.

Usage: python3 scripts/determinism_probe.py OUTDIR [SEED]
"""
import sys
from pathlib import Path

from gf2.cli import main as cli_main
from gf2.config import Config, to_dict
from gf2.toydata import make_scenes, scenes_to_dataset
from gf2.trainer import Trainer, generate_scene
from gf2.visuals import export_visuals


def probe_config(seed: int) -> Config:
    cfg = Config()
    cfg.data.resolution = 16
    cfg.data.size_min = 2
    cfg.data.size_max = 4
    cfg.data.n_min = 1
    cfg.data.n_max = 2
    cfg.model.resolution = 16
    cfg.model.k_max = 4
    cfg.model.d_z = cfg.model.d_u = cfg.model.d_w = 12
    cfg.model.att_dim = 12
    cfg.model.depth_head_dim = 8
    cfg.model.planner_channels = [12, 12, 8]
    cfg.model.executor_channels = [12, 12, 8]
    cfg.model.disc_channels = [8, 12, 12]
    cfg.model.mapping_layers = 3
    cfg.train.batch = 2
    cfg.train.steps_plan = 20
    cfg.train.steps_exec = 20
    cfg.train.steps_joint = 10
    cfg.train.seed = seed
    cfg.data.seed = seed
    return cfg


def run(outdir: Path, seed: int):
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = probe_config(seed)
    scenes = make_scenes(cfg.data, 24, seed=cfg.data.seed)
    dataset = scenes_to_dataset(scenes, cfg.model.k_max)
    trainer = Trainer(cfg, dataset, outdir)
    trainer.run_pipeline()
    for i in range(2):
        layout, _styles, image = generate_scene(trainer.models, seed=100 + i)
        export_visuals(layout, image.data, outdir / f"gen_{i}_")


if __name__ == "__main__":
    run(Path(sys.argv[1]), int(sys.argv[2]) if len(sys.argv) > 2 else 7)
