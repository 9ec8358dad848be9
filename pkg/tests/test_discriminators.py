import numpy as np
import pytest

from gf2 import tensor as T
from gf2.discriminators import ImageDiscriminator, LayoutDiscriminator, segment_pool
from gf2.errors import ShapeMismatch
from gf2.rng import Rng
from gf2.tensor import Tensor
from tests.conftest import tiny_config


@pytest.fixture(scope="module")
def nets():
    cfg = tiny_config().model
    dl = LayoutDiscriminator(Rng(0).child("dl"), cfg)
    di = ImageDiscriminator(Rng(0).child("di"), cfg)
    return cfg, dl, di


def layout_batch(cfg, seed, b=2):
    rng = Rng(seed).child("lb")
    raw = rng.uniform((b, cfg.k_max, cfg.resolution, cfg.resolution), 0.01, 1.0)
    a = raw / raw.sum(axis=1, keepdims=True)
    m = rng.uniform((b, cfg.k_max, cfg.num_classes), 0.01, 1.0)
    m /= m.sum(axis=-1, keepdims=True)
    cm = np.einsum("bkhw,bkc->bchw", a, m).astype(np.float32)
    return np.concatenate([cm, a], axis=1), a


class TestLayoutDiscriminator:
    def test_deterministic(self, nets):
        cfg, dl, _ = nets
        s, _ = layout_batch(cfg, 1)
        a = dl(Tensor(s))
        b = dl(Tensor(s))
        assert np.array_equal(a.data, b.data)
        assert a.shape == (2,)

    def test_input_gradient_exists(self, nets):
        cfg, dl, _ = nets
        s, _ = layout_batch(cfg, 2)
        x = Tensor(s, requires_grad=True)
        T.tsum(dl(x)).backward()
        assert x.grad is not None and np.isfinite(x.grad).all()

    def test_no_dead_input_channels(self, nets):
        cfg, dl, _ = nets
        s, _ = layout_batch(cfg, 3, b=1)
        base = float(dl(Tensor(s)).data[0])
        rng = Rng(4).child("probe")
        for probe in range(10):
            ch = int(rng.child(probe).integers(0, s.shape[1] - 1))
            bumped = s.copy()
            bumped[0, ch] += 0.05
            assert float(dl(Tensor(bumped)).data[0]) != base

    def test_shape_mismatch(self, nets):
        cfg, dl, _ = nets
        with pytest.raises(ShapeMismatch):
            dl(Tensor(np.zeros((1, 3, cfg.resolution, cfg.resolution))))


class TestSegmentPool:
    def test_uniform_masks_give_global_mean(self):
        rng = Rng(5).child("sp")
        feats = Tensor(rng.normal((1, 6, 4, 4)))
        a = Tensor(np.full((1, 2, 4, 4), 0.5, np.float32))
        pooled, skipped = segment_pool(feats, a)
        mean = feats.data.mean(axis=(2, 3))
        assert np.allclose(pooled.data[0, 0], mean[0], atol=1e-5)
        assert np.allclose(pooled.data[0, 1], mean[0], atol=1e-5)
        assert not skipped.any()

    def test_disjoint_masks_are_regional_means(self):
        rng = Rng(6).child("sp")
        feats = Tensor(rng.normal((1, 3, 4, 4)))
        a = np.zeros((1, 2, 4, 4), np.float32)
        a[0, 0, :2] = 1.0
        a[0, 1, 2:] = 1.0
        pooled, _ = segment_pool(feats, Tensor(a))
        assert np.allclose(pooled.data[0, 0], feats.data[0, :, :2].mean(axis=(1, 2)),
                           atol=1e-5)
        assert np.allclose(pooled.data[0, 1], feats.data[0, :, 2:].mean(axis=(1, 2)),
                           atol=1e-5)

    def test_zero_mass_skipped(self):
        feats = Tensor(Rng(7).child("sp").normal((1, 3, 4, 4)))
        a = np.zeros((1, 2, 4, 4), np.float32)
        a[0, 0] = 1.0
        pooled, skipped = segment_pool(feats, Tensor(a))
        assert skipped.tolist() == [[False, True]]
        assert np.array_equal(pooled.data[0, 1], np.zeros(3))

    def test_matches_bruteforce_on_random_8x8(self):
        rng = Rng(8).child("sp")
        for trial in range(5):
            r = rng.child(trial)
            feats = r.normal((1, 4, 8, 8))
            raw = r.uniform((1, 3, 8, 8), 0.0, 1.0)
            a = raw / raw.sum(axis=1, keepdims=True)
            pooled, _ = segment_pool(Tensor(feats), Tensor(a))
            for i in range(3):
                num = np.zeros(4)
                den = 0.0
                for y in range(8):
                    for x in range(8):
                        num += a[0, i, y, x] * feats[0, :, y, x]
                        den += a[0, i, y, x]
                assert np.allclose(pooled.data[0, i], num / den, atol=1e-6)

    def test_linearity_in_features(self):
        rng = Rng(9).child("sp")
        f1, f2 = rng.normal((1, 3, 4, 4)), rng.normal((1, 3, 4, 4))
        raw = rng.uniform((1, 2, 4, 4), 0.1, 1.0)
        a = Tensor(raw / raw.sum(axis=1, keepdims=True))
        p1, _ = segment_pool(Tensor(f1), a)
        p2, _ = segment_pool(Tensor(f2), a)
        p12, _ = segment_pool(Tensor(f1 + 2 * f2), a)
        assert np.allclose(p12.data, p1.data + 2 * p2.data, atol=1e-5)


class TestImageDiscriminator:
    def test_output_shapes(self, nets):
        cfg, _, di = nets
        s, a = layout_batch(cfg, 10)
        x = Rng(10).child("img").normal((2, 3, cfg.resolution, cfg.resolution))
        out = di(Tensor(s), Tensor(x), Tensor(a))
        assert out["scene_logit"].shape == (2,)
        assert out["seg_logits"].shape == (2, cfg.num_classes, cfg.resolution,
                                           cfg.resolution)
        assert out["segment_logits"].shape == (2, cfg.k_max)

    def test_pooling_identity_single_cell(self, nets):
        cfg, _, di = nets
        s, _ = layout_batch(cfg, 11, b=1)
        x = Rng(11).child("img").normal((1, 3, cfg.resolution, cfg.resolution))
        stem_res = cfg.resolution // (2 ** len(cfg.disc_channels))
        a = np.zeros((1, 1, stem_res, stem_res), np.float32)
        a[0, 0, 1, 1] = 1.0
        out = di(Tensor(s), Tensor(x), Tensor(a), heads=("segments",))
        stem = di.forward_combined(T.concat([Tensor(s), Tensor(x)], axis=1),
                                   heads=())["stem"]
        pooled, _ = segment_pool(stem, Tensor(a))
        assert np.allclose(pooled.data[0, 0], stem.data[0, :, 1, 1], atol=1e-6)

    def test_segment_score_permutation_equivariance(self, nets):
        cfg, _, di = nets
        s, a = layout_batch(cfg, 12, b=1)
        x = Rng(12).child("img").normal((1, 3, cfg.resolution, cfg.resolution))
        out = di(Tensor(s), Tensor(x), Tensor(a))
        perm = np.array([2, 0, 3, 1])
        out_p = di(Tensor(s), Tensor(x), Tensor(a[:, perm]))
        assert np.allclose(out_p["segment_logits"].data[0],
                           out["segment_logits"].data[0][perm], atol=1e-5)

    def test_stem_sharing_head_independence(self, nets):
        cfg, _, di = nets
        s, a = layout_batch(cfg, 13)
        x = Rng(13).child("img").normal((2, 3, cfg.resolution, cfg.resolution))
        full = di(Tensor(s), Tensor(x), Tensor(a))
        no_seg = di(Tensor(s), Tensor(x), None, heads=("scene", "segmentation"))
        assert np.array_equal(full["scene_logit"].data, no_seg["scene_logit"].data)
        assert np.array_equal(full["seg_logits"].data, no_seg["seg_logits"].data)

    def test_concat_baseline_mode(self, nets):
        cfg, _, di = nets
        s, _ = layout_batch(cfg, 14)
        x = Rng(14).child("img").normal((2, 3, cfg.resolution, cfg.resolution))
        out = di(Tensor(s), Tensor(x), None, heads=("scene",))
        assert set(out) == {"stem", "scene_logit"}

    def test_shape_mismatch(self, nets):
        cfg, _, di = nets
        s, _ = layout_batch(cfg, 15)
        with pytest.raises(ShapeMismatch):
            di(Tensor(s), Tensor(np.zeros((2, 3, 8, 8))))
