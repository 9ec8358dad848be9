import json
import os
from pathlib import Path

import numpy as np
import pytest

from gf2 import config as cfgmod
from gf2.cli import main
from gf2.compositor import composite
from gf2.errors import BadConfig
from gf2.ppm import read_ppm
from gf2.visuals import export_visuals
from tests.conftest import tiny_config
from tests.test_compositor import random_segments


def write_tiny_cfg(path: Path, **train_overrides) -> Path:
    cfg = tiny_config(**train_overrides)
    path.write_text(json.dumps(cfgmod.to_dict(cfg)))
    return path


class TestConfig:
    def test_file_env_cli_precedence(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"lr": 0.5, "batch": 3},
                                 "model": {"k_max": 5}}))
        env = {"GF2_train__lr": "0.25", "GF2_model__k_max": "7"}
        cfg = cfgmod.load(p, env=env, overrides=["train.lr=0.125"])
        assert cfg.train.lr == 0.125   # CLI wins over env
        assert cfg.model.k_max == 7    # env wins over file
        assert cfg.train.batch == 3    # file survives where not overridden

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"train": {"nope": 1}}))
        with pytest.raises(BadConfig):
            cfgmod.load(p)

    def test_type_coercion(self):
        cfg = cfgmod.load(None, env={}, overrides=[
            "model.planner_channels=8,8,8", "train.segment_fidelity=false",
            "train.gamma_r1=2.5"])
        assert cfg.model.planner_channels == [8, 8, 8]
        assert cfg.train.segment_fidelity is False
        assert cfg.train.gamma_r1 == 2.5

    def test_bad_override_shape(self):
        with pytest.raises(BadConfig):
            cfgmod.load(None, env={}, overrides=["binformat"])
        with pytest.raises(BadConfig):
            cfgmod.load(None, env={}, overrides=["nosection.lr=1"])


class TestDataGen:
    def test_contract(self, tmp_path):
        cfgp = write_tiny_cfg(tmp_path / "cfg.json")
        rc = main(["data", "gen", "--config", str(cfgp), "--out", str(tmp_path / "d"),
                   "--count", "6", "--val-count", "2"])
        assert rc == 0
        train = tmp_path / "d" / "train"
        assert len(list(train.glob("img_*.ppm"))) == 6
        assert len(list(train.glob("layout_*.bin"))) == 6
        manifest = json.loads((train / "manifest.json").read_text())
        assert manifest["count"] == 6

    def test_config_error_exit_code(self, tmp_path):
        rc = main(["data", "gen", "--config", str(tmp_path / "missing.json"),
                   "--out", str(tmp_path / "d")])
        assert rc in (1, 2)


class TestGenerate:
    def test_deterministic_outputs(self, micro_ckpt, tmp_path):
        for sub in ("a", "b"):
            rc = main(["generate", "--ckpt", str(micro_ckpt), "--n", "2",
                       "--seed", "7", "--out", str(tmp_path / sub)])
            assert rc == 0
        for name in ("scene_000_image.ppm", "scene_001_image.ppm",
                     "scene_000_layout.ppm", "scene_000_depth.ppm"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes()

    def test_missing_checkpoint_is_runtime_error(self, tmp_path):
        rc = main(["generate", "--ckpt", str(tmp_path / "none.gf2c"), "--n", "1",
                   "--out", str(tmp_path / "g")])
        assert rc == 1


class TestManipulate:
    def test_before_after_written(self, micro_ckpt, tmp_path):
        rc = main(["manipulate", "--ckpt", str(micro_ckpt), "--segment", "0",
                   "--which", "structure", "--t", "0.5", "--seed", "3",
                   "--out", str(tmp_path / "m")])
        assert rc == 0
        assert (tmp_path / "m" / "before_image.ppm").exists()
        assert (tmp_path / "m" / "after_image.ppm").exists()


class TestExportVisuals:
    def test_depth_normalization(self, tmp_path):
        layout = composite(random_segments(3, 3, h=8, w=8), k_max=4)
        img = np.zeros((8, 8, 3), np.float32)
        files = export_visuals(layout, img, tmp_path / "v_")
        depth = read_ppm(tmp_path / "v_depth.ppm")
        u8 = ((depth + 1) * 127.5).round()
        assert u8.min() == 0.0
        assert u8.max() == 255.0
        d = layout.depth_map.data
        order_px = np.unravel_index([d.argmin(), d.argmax()], d.shape)
        assert u8[order_px[0][0], order_px[1][0], 0] <= u8[order_px[0][1], order_px[1][1], 0]

    def test_segments_json(self, tmp_path):
        layout = composite(random_segments(4, 2, h=8, w=8), k_max=4)
        export_visuals(layout, np.zeros((8, 8, 3), np.float32), tmp_path / "s_")
        segs = json.loads((tmp_path / "s_segments.json").read_text())
        assert len(segs) == 2
        assert {"index", "class", "mean_depth", "bbox", "birth_step"} <= set(segs[0])

    def test_ppm_roundtrip_lossless(self, tmp_path):
        layout = composite(random_segments(5, 2, h=8, w=8), k_max=4)
        img = np.clip(np.random.default_rng(0).normal(size=(8, 8, 3)), -1, 1).astype(np.float32)
        export_visuals(layout, img, tmp_path / "r_")
        once = read_ppm(tmp_path / "r_image.ppm")
        export_visuals(layout, once, tmp_path / "r2_")
        assert (tmp_path / "r_image.ppm").read_bytes() == \
               (tmp_path / "r2_image.ppm").read_bytes()


class TestEval:
    def test_report_schema(self, micro_ckpt, tmp_path):
        cfg = tiny_config()
        from gf2.toydata import write_dataset

        write_dataset(tmp_path / "d", cfg.data, count=8, seed=2, k_max=cfg.model.k_max,
                      split="val")
        rc = main(["eval", "--ckpt", str(micro_ckpt), "--data", str(tmp_path / "d/val"),
                   "--out", str(tmp_path / "report.json"), "--seed", "1"])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        for key in ("miou", "pacc", "ari", "diversity", "precision", "recall",
                    "dci", "object_rho", "property_rho", "proxy_space"):
            assert key in report
        assert 0.0 <= report["pacc"] <= 1.0
        assert -1.0 <= report["ari"] <= 1.0
        assert 0.0 <= report["precision"] <= 1.0
        csv_path = tmp_path / "report.classes.csv"
        assert csv_path.exists()
        header = csv_path.read_text().splitlines()[0]
        assert header == "scene,class,iou,gt_frequency"
