"""Sweep planning depth x refinement gate x consistency loss.

Each cell trains a small model jointly from scratch for a fixed number of
steps and leaves its loss curves in its own directory, so any plotting tool
can compare the runs.

Usage: python3 scripts/ablation_grid.py OUTDIR [STEPS]
"""
import itertools
import json
import sys
import time
from pathlib import Path

from gf2.config import Config
from gf2.toydata import make_scenes, scenes_to_dataset
from gf2.trainer import Trainer

LOSSES = ("none", "concat", "edge", "sm")
GATES = ("full", "latents", "layout", "image", "off")
STEPS_T = (0, 1, 2, 3)


def cell_config(steps: int, gate: str, loss: str) -> Config:
    cfg = Config()
    cfg.data.resolution = 16
    cfg.data.size_min = 2
    cfg.data.size_max = 4
    cfg.data.n_min = 1
    cfg.data.n_max = 2
    cfg.model.resolution = 16
    cfg.model.k_max = 4
    cfg.model.steps = steps
    cfg.model.gate_mode = gate
    cfg.model.d_z = cfg.model.d_u = cfg.model.d_w = 8
    cfg.model.att_dim = 8
    cfg.model.depth_head_dim = 6
    cfg.model.gate_hidden = 6
    cfg.model.planner_channels = [8, 8, 8]
    cfg.model.executor_channels = [8, 8, 8]
    cfg.model.disc_channels = [8, 8, 8]
    cfg.model.mapping_layers = 2
    cfg.train.batch = 2
    cfg.train.schedule = "parallel"
    cfg.train.loss_baseline = loss
    cfg.train.log_every = 40
    cfg.train.seed = 3
    return cfg


def run(outdir: Path, steps: int):
    outdir.mkdir(parents=True, exist_ok=True)
    dataset = None
    results = []
    for t_steps, gate, loss in itertools.product(STEPS_T, GATES, LOSSES):
        cfg = cell_config(t_steps, gate, loss)
        if dataset is None:
            dataset = scenes_to_dataset(make_scenes(cfg.data, 60, seed=1),
                                        cfg.model.k_max)
        tag = f"T{t_steps}_{gate}_{loss}"
        t0 = time.time()
        trainer = Trainer(cfg, dataset, outdir / tag)
        trainer.finetune_joint(steps)
        trainer.close()
        results.append({"cell": tag, "seconds": round(time.time() - t0, 2)})
        print(f"{tag}: {results[-1]['seconds']}s")
    (outdir / "grid.json").write_text(json.dumps(results, indent=1))


if __name__ == "__main__":
    run(Path(sys.argv[1] if len(sys.argv) > 1 else "runs/ablations"),
        int(sys.argv[2]) if len(sys.argv) > 2 else 200)
