import numpy as np
import pytest

from gf2 import tensor as T
from gf2.errors import EmptyScene
from gf2.gradcheck import check_block
from gf2.planner import CountDistribution, Planner, PlannerNet
from gf2.rng import Rng
from gf2.tensor import Tensor
from tests.conftest import tiny_config


def make_planner(seed=0, steps=2, count_mu=2.0, count_sigma=0.0, k_max=None):
    cfg = tiny_config().model
    cfg.steps = steps
    if k_max is not None:
        cfg.k_max = k_max
    net = PlannerNet(Rng(seed).child("g1"), cfg)
    return Planner(net, CountDistribution(mu=count_mu, sigma=count_sigma,
                                          k_min=1, k_max=cfg.k_max))


class TestCountDistribution:
    def test_rounding(self):
        dist = CountDistribution(mu=2.4, sigma=0.0, k_min=0, k_max=10)
        assert dist.sample(Rng(0).child("c")) == 2

    def test_clamp_to_floor(self):
        dist = CountDistribution(mu=-5.0, sigma=0.0, k_min=1, k_max=10)
        assert dist.sample(Rng(0).child("c")) == 1

    def test_monte_carlo_mean(self):
        dist = CountDistribution(mu=3.0, sigma=1.0, k_min=0, k_max=50)
        rng = Rng(11).child("mc")
        draws = np.array([dist.sample(rng.child(i)) for i in range(100_000)])
        assert abs(draws.mean() - 3.0) < 0.05

    def test_fit(self):
        dist = CountDistribution.fit([4, 4, 2, 6], steps=2, k_min=1, k_max=8)
        assert dist.mu == pytest.approx(2.0)
        assert dist.sigma == pytest.approx(np.std([2.0, 2.0, 1.0, 3.0]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            CountDistribution(mu=1.0, sigma=-0.1)
        with pytest.raises(ValueError):
            CountDistribution(mu=1.0, sigma=0.0, k_min=5, k_max=2)


class TestStructureLatents:
    def test_identical_rows_map_identically(self):
        planner = make_planner()
        z = Rng(1).child("z").normal((12,))
        Z = Tensor(np.stack([z, z, z]))
        U = planner.net.map_structure_latents(Z)
        assert np.array_equal(U.data[0], U.data[1])
        assert np.array_equal(U.data[0], U.data[2])

    def test_shared_parameters_across_k(self):
        planner = make_planner()
        before = planner.net.param_count()
        for k in (1, 8):
            Z = Tensor(Rng(2).child(f"z{k}").normal((k, 12)))
            assert planner.net.map_structure_latents(Z).shape == (k, 12)
        assert planner.net.param_count() == before

    def test_gradient_through_mapping(self):
        planner = make_planner()
        z = Tensor(Rng(3).child("z").normal((2, 12)), requires_grad=True)
        probe = Rng(3).child("p").normal((2, 12))

        def forward():
            return T.tmean(T.mul(planner.net.map_structure_latents(z), Tensor(probe)))

        leaves = list(planner.net.mapping.parameters().values()) + [z]
        check_block(forward, leaves, tol=1e-3)


class TestPlanStep:
    def test_count_and_normalization(self):
        planner = make_planner()
        U = planner.net.map_structure_latents(Tensor(Rng(4).child("z").normal((3, 12))))
        drafts = planner.plan_step(U, None, Rng(4).child("s"))
        assert len(drafts) == 3
        for d in drafts:
            assert abs(d.P.data.sum() - 1.0) < 1e-5
            assert abs(d.M.data.sum() - 1.0) < 1e-6

    def test_determinism(self):
        planner = make_planner()
        U = planner.net.map_structure_latents(Tensor(Rng(5).child("z").normal((2, 12))))
        a = planner.plan_step(U, None, Rng(7).child("s"))
        b = planner.plan_step(U, None, Rng(7).child("s"))
        for x, y in zip(a, b):
            assert x.bytes_key() == y.bytes_key()

    def test_conditioning_is_live(self):
        planner = make_planner()
        U = planner.net.map_structure_latents(Tensor(Rng(6).child("z").normal((2, 12))))
        prev_a = planner.plan_step(U, None, Rng(8).child("s"))
        layout = planner.plan_scene(Rng(9).child("scene"))
        prev_b = planner.plan_step(U, layout, Rng(8).child("s"))
        assert any(x.bytes_key() != y.bytes_key() for x, y in zip(prev_a, prev_b))


class TestPlanScene:
    def test_bookkeeping_T2_k3(self):
        planner = make_planner(count_mu=3.0, k_max=6)
        layout = planner.plan_scene(Rng(10).child("scene"))
        assert layout.k == 6
        assert [s.birth_step for s in layout.segments] == [1, 1, 1, 2, 2, 2]

    def test_single_pass_mode(self):
        planner = make_planner(steps=0)
        layout = planner.plan_scene(Rng(11).child("scene"))
        assert layout.k == 1
        assert np.array_equal(layout.A.data, np.ones_like(layout.A.data))
        assert layout.dense_class is not None
        assert np.abs(layout.class_map.data.sum(axis=0) - 1).max() < 1e-5

    @pytest.mark.parametrize("steps", [0, 1, 2, 3])
    def test_step_grid_runnable(self, steps):
        planner = make_planner(steps=steps)
        layout = planner.plan_scene(Rng(12 + steps).child("scene"))
        assert layout.k >= 1

    def test_batched_matches_contract(self):
        planner = make_planner(count_mu=2.0)
        maps = planner.plan_scene_batched(3, Rng(13).child("scene"))
        assert maps["A"].shape[0] == 3
        assert np.abs(maps["A"].data.sum(axis=1) - 1).max() < 1e-5
        assert maps["tensor"].shape[1] == planner.cfg.num_classes + planner.cfg.k_max


class TestRegenerate:
    def test_determinism_same_inputs(self):
        planner = make_planner()
        layout = planner.plan_scene(Rng(14).child("scene"))
        z = layout.segments[1].z
        a = planner.regenerate_segment(layout, 1, z, Rng(15).child("r"))
        b = planner.regenerate_segment(layout, 1, z, Rng(15).child("r"))
        assert a.segments[1].bytes_key() == b.segments[1].bytes_key()

    def test_locality_others_byte_identical(self):
        planner = make_planner()
        layout = planner.plan_scene(Rng(16).child("scene"))
        z_new = Rng(17).child("z").normal((12,))
        out = planner.regenerate_segment(layout, 0, z_new, Rng(17).child("r"))
        for j in range(1, layout.k):
            assert out.segments[j] is layout.segments[j]
            assert out.segments[j].bytes_key() == layout.segments[j].bytes_key()

    def test_index_out_of_range(self):
        planner = make_planner()
        layout = planner.plan_scene(Rng(18).child("scene"))
        with pytest.raises(IndexError):
            planner.regenerate_segment(layout, layout.k, np.zeros(12), Rng(0).child("r"))

    def test_interpolation_yields_distinct_layouts(self):
        planner = make_planner()
        layout = planner.plan_scene(Rng(19).child("scene"))
        z_old = layout.segments[0].z
        z_new = Rng(20).child("z").normal((12,))
        results = []
        for t in (0.0, 0.5, 1.0):
            z = (1 - t) * z_old + t * z_new
            out = planner.regenerate_segment(layout, 0, z, Rng(21).child("r"))
            results.append(out.segments[0].bytes_key())
            for j in range(1, layout.k):
                assert out.segments[j].bytes_key() == layout.segments[j].bytes_key()
        assert len(set(results)) == 3

    def test_gradient_through_step(self):
        planner = make_planner()
        U = Tensor(Rng(22).child("u").normal((1, 2, 12)), requires_grad=True)
        probe_rng = Rng(22).child("p")
        probes = {k: probe_rng.child(k).normal((1, 2) + shape) for k, shape in
                  (("P", (16, 16)), ("d", (16, 16)), ("M", (4,)))}

        def forward():
            maps = planner.net.step_maps(U, None, np.array([0, 1]))
            total = T.tmean(T.mul(maps["P"], Tensor(probes["P"])))
            total = T.add(total, T.tmean(T.mul(maps["d"], Tensor(probes["d"]))))
            return T.add(total, T.tmean(T.mul(maps["M"], Tensor(probes["M"]))))

        leaves = [U] + list(planner.net.parameters().values())
        check_block(forward, leaves, tol=1e-3, seed=3)


def test_empty_scene_raises():
    planner = make_planner(count_mu=-5.0, count_sigma=0.0)
    planner.count.k_min = 0
    with pytest.raises(EmptyScene):
        planner.plan_scene(Rng(30).child("scene"))


def test_parameter_count_independent_of_steps():
    counts = {s: make_planner(steps=s).net.param_count() for s in (0, 1, 3)}
    assert len(set(counts.values())) == 1
