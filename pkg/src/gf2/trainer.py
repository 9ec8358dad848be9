"""Optimization loops for the two stages plus joint fine-tuning.

Paired schedule: (A) planning GAN on real layouts, (B) execution GAN on
real layout->image pairs, (C) joint fine-tuning where the executor renders
generated layouts.  Unpaired drops B and the pairing (consistency losses
move to generated pairs, segment fidelity is replaced by edge matching);
parallel trains everything jointly from scratch.

Every random draw comes from a stream labeled by (phase, step), which is
what makes resume-from-checkpoint bit-identical to an uninterrupted run.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .compositor import NoiseConfig, noisy_layout
from .config import Config, from_dict, to_dict
from .discriminators import ImageDiscriminator, LayoutDiscriminator
from .errors import EmptyDataset, MissingCheckpoint, Unsupported
from .executor import Executor, ExecutorNet, StyleLatents
from .losses import (LossReport, d_loss_nonsat, edge_matching_loss, g_loss_nonsat,
                     log_softmax, r1_penalty, semantic_matching_loss,
                     segment_fidelity_loss)
from .optim import Adam, Ema
from .planner import CountDistribution, Planner, PlannerNet
from .rng import Rng
from .tensor import Tensor
from .toydata import Dataset


def _ema_decay(base: float, updates: int) -> float:
    """Warmup ramp: track parameters closely early, settle at the base decay."""
    return min(base, (1.0 + updates) / (10.0 + updates))

BASELINES = ("none", "concat", "edge", "sm", "vgg")


@dataclass
class Models:
    planner: Planner
    executor: Executor
    d_layout: LayoutDiscriminator
    d_image: ImageDiscriminator
    ema_g1: Ema
    ema_g2: Ema
    cfg: Config


def build_models(cfg: Config, count_dist: CountDistribution | None = None) -> Models:
    rng = Rng(cfg.train.seed).child("init")
    if count_dist is None:
        mu = cfg.model.count_mu if cfg.model.count_mu >= 0 else 2.0
        sigma = cfg.model.count_sigma if cfg.model.count_sigma >= 0 else 1.0
        count_dist = CountDistribution(mu=mu, sigma=sigma, k_min=cfg.model.k_min,
                                       k_max=cfg.model.k_max)
    p_net = PlannerNet(rng.child("g1"), cfg.model)
    e_net = ExecutorNet(rng.child("g2"), cfg.model)
    return Models(
        planner=Planner(p_net, count_dist),
        executor=Executor(e_net),
        d_layout=LayoutDiscriminator(rng.child("dl"), cfg.model),
        d_image=ImageDiscriminator(rng.child("di"), cfg.model),
        ema_g1=Ema(p_net.parameters(), cfg.train.ema_decay),
        ema_g2=Ema(e_net.parameters(), cfg.train.ema_decay),
        cfg=cfg,
    )


def prepare_arrays(dataset: Dataset, num_classes: int, k_max: int) -> dict:
    """Stack the dataset into contiguous arrays for fast batch slicing."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset has no scenes")
    n = len(dataset)
    r = dataset.resolution
    images = np.stack([img.transpose(2, 0, 1) for img in dataset.images]).astype(np.float32)
    s = np.stack([lay.tensor().data for lay in dataset.layouts])
    a = np.stack([lay.instance_map.data for lay in dataset.layouts])
    class_map = s[:, :num_classes]
    m = np.zeros((n, k_max, num_classes), dtype=np.float32)
    mean_d = np.zeros((n, k_max), dtype=np.float32)
    for i, lay in enumerate(dataset.layouts):
        for j, seg in enumerate(lay.segments):
            m[i, j] = seg.M.data
            mean_d[i, j] = seg.mean_depth()
    return {"images": images, "s": s, "a": a, "class_map": class_map,
            "m": m, "mean_d": mean_d, "counts": dataset.counts, "res": r}


class Trainer:
    def __init__(self, cfg: Config, dataset: Dataset, outdir,
                 models: Models | None = None, val_dataset: Dataset | None = None):
        if cfg.train.loss_baseline not in BASELINES:
            raise Unsupported(f"loss baseline {cfg.train.loss_baseline!r}")
        if cfg.train.loss_baseline == "vgg":
            raise Unsupported("the VGG feature-matching baseline needs a pretrained "
                              "network and is not available")
        if cfg.model.style_mixing:
            print("note: style_mixing is recorded in the config but is a no-op here")
        self.cfg = cfg
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.data = prepare_arrays(dataset, cfg.model.num_classes, cfg.model.k_max)
        self.val = val_dataset
        count_dist = None
        if cfg.model.count_mu < 0 or cfg.model.count_sigma < 0:
            count_dist = CountDistribution.fit(
                self.data["counts"], max(cfg.model.steps, 1),
                k_min=cfg.model.k_min, k_max=cfg.model.k_max)
        self.models = models or build_models(cfg, count_dist)
        if models is not None and count_dist is not None:
            self.models.planner.count = count_dist
        tr = cfg.train
        self.opt_g1 = Adam(self.models.planner.net.parameters(), tr.lr,
                           (tr.beta1, tr.beta2), tr.adam_eps)
        self.opt_g2 = Adam(self.models.executor.net.parameters(), tr.lr,
                           (tr.beta1, tr.beta2), tr.adam_eps)
        self.opt_dl = Adam(self.models.d_layout.parameters(), tr.lr,
                           (tr.beta1, tr.beta2), tr.adam_eps)
        self.opt_di = Adam(self.models.d_image.parameters(), tr.lr,
                           (tr.beta1, tr.beta2), tr.adam_eps)
        self.noise_cfg = NoiseConfig(sigma=tr.noise_sigma)
        self.steps_done = {"plan": 0, "exec": 0, "joint": 0}
        self.root = Rng(tr.seed)
        self._curves: dict[str, csv.writer] = {}
        self._curve_files = {}

    # -- plumbing ----------------------------------------------------------------

    def _log(self, phase: str, step: int, report: LossReport):
        if phase not in self._curves:
            f = open(self.outdir / f"curves_{phase}.csv", "a", newline="")
            self._curve_files[phase] = f
            self._curves[phase] = csv.writer(f)
        for name, value in report.terms.items():
            self._curves[phase].writerow([step, name, f"{value:.6g}"])
        self._curve_files[phase].flush()

    def close(self):
        for f in self._curve_files.values():
            f.close()
        self._curve_files.clear()
        self._curves.clear()

    def _zero_all(self):
        for opt in (self.opt_g1, self.opt_g2, self.opt_dl, self.opt_di):
            opt.zero_grad()

    def _batch_indices(self, rng: Rng) -> np.ndarray:
        return np.asarray(rng.integers(0, len(self.data["images"]) - 1,
                                       (self.cfg.train.batch,)))

    def _fake_styles(self, maps: dict, rng: Rng):
        """Style latents for generated layouts: z plus per-segment depth/class."""
        b, k = maps["M"].shape[0], maps["M"].shape[1]
        z = Tensor(rng.normal((b, k, self.cfg.model.d_z)))
        mean_d = T.tmean(maps["d"], axis=(2, 3))
        w = self.models.executor.net.map_style_latents_batched(z, mean_d, maps["M"])
        return w, np.arange(k)

    def _render_fake(self, maps: dict, rng: Rng, w=None, slots=None):
        if w is None:
            w, slots = self._fake_styles(maps, rng.child("style"))
        return self.models.executor.net.execute_maps(
            maps["A"], maps["class_map"], w, slots, rng.child("render"))

    def _real_exec_batch(self, idx: np.ndarray, rng: Rng):
        """Real layouts as executor inputs (k_max-wide, zero rows inert)."""
        a = Tensor(self.data["a"][idx])
        class_map = Tensor(self.data["class_map"][idx])
        m = Tensor(self.data["m"][idx])
        mean_d = Tensor(self.data["mean_d"][idx])
        z = Tensor(rng.normal((len(idx), self.cfg.model.k_max, self.cfg.model.d_z)))
        w = self.models.executor.net.map_style_latents_batched(z, mean_d, m)
        return a, class_map, w, np.arange(self.cfg.model.k_max)

    def _maybe_r1(self, phase: str, step: int, d_fn, real_input: np.ndarray) -> Tensor | None:
        tr = self.cfg.train
        if tr.gamma_r1 <= 0 or step % tr.r1_interval:
            return None
        x = Tensor(real_input, requires_grad=True)
        return r1_penalty(d_fn, x, tr.gamma_r1 * tr.r1_interval)

    # -- phase A: planning GAN ------------------------------------------------------

    def train_planning(self, steps: int | None = None):
        tr = self.cfg.train
        steps = tr.steps_plan if steps is None else steps
        planner = self.models.planner
        d = self.models.d_layout
        start = self.steps_done["plan"]
        for step in range(start, start + steps):
            rng = self.root.child(f"plan/{step}")
            report = LossReport()
            idx = self._batch_indices(rng.child("batch"))
            real = self.data["s"][idx]
            # one rollout serves both sub-steps: the critic sees it detached
            fake = planner.plan_scene_batched(tr.batch, rng.child("fake"))
            self._zero_all()
            real_noised = noisy_layout(Tensor(real), self.noise_cfg, rng.child("noise_r"))
            fake_s = Tensor(fake["tensor"].data)
            if tr.noise_fake:
                fake_s = noisy_layout(fake_s, self.noise_cfg, rng.child("noise_f"))
            raw_d = d_loss_nonsat(d(real_noised), d(fake_s))
            report.add("d_adv", raw_d, tr.lambda_adv)
            loss_d = T.mul(raw_d, tr.lambda_adv)
            r1 = self._maybe_r1("plan", step, d, real_noised.data)
            if r1 is not None:
                report.add("r1", float(r1.data) / tr.r1_interval)
                loss_d = T.add(loss_d, r1)
            loss_d.backward()
            self.opt_dl.step()
            # generator step against the updated critic
            self._zero_all()
            fake_s = fake["tensor"]
            if tr.noise_fake:
                fake_s = noisy_layout(fake_s, self.noise_cfg, rng.child("noise_g"))
            raw_g = g_loss_nonsat(d(fake_s))
            report.add("g_adv", raw_g, tr.lambda_adv)
            loss_g = T.mul(raw_g, tr.lambda_adv)
            loss_g.backward()
            self.opt_g1.step()
            self.models.ema_g1.update(planner.net.parameters(),
                                      _ema_decay(tr.ema_decay, self.opt_g1.t))
            if step % tr.log_every == 0 or step == start + steps - 1:
                self._log("plan", step, report)
            self.steps_done["plan"] = step + 1
        return self

    # -- phase B: execution GAN on real pairs -----------------------------------------

    def _image_d_losses(self, s_in: Tensor, x_real: Tensor, x_fake: Tensor,
                        masks: Tensor, class_map: Tensor, report: LossReport):
        tr = self.cfg.train
        baseline = tr.loss_baseline
        heads = ["scene"]
        aux = baseline in ("edge", "sm")
        use_sf = tr.segment_fidelity and aux and tr.schedule == "paired"
        if aux:
            heads.append("segmentation")
        if use_sf:
            heads.append("segments")
        d = self.models.d_image
        out_real = d(s_in, x_real, masks, tuple(heads))
        out_fake = d(s_in, x_fake, masks, tuple(heads))
        raw = d_loss_nonsat(out_real["scene_logit"], out_fake["scene_logit"])
        report.add("d_adv", raw, tr.lambda_adv)
        loss = T.mul(raw, tr.lambda_adv)
        if baseline == "sm":
            sm = semantic_matching_loss(out_real["seg_logits"], class_map)
            report.add("l_sm_real", sm, tr.lambda_sm)
            loss = T.add(loss, T.mul(sm, tr.lambda_sm))
        elif baseline == "edge":
            em = edge_matching_loss(class_map, T.softmax(out_real["seg_logits"], axis=1))
            report.add("l_em", em, tr.lambda_em)
            loss = T.add(loss, T.mul(em, tr.lambda_em))
        if use_sf:
            sf = T.add(
                segment_fidelity_loss(out_real["segment_logits"], out_real["skipped"], "d_real"),
                segment_fidelity_loss(out_fake["segment_logits"], out_fake["skipped"], "d_fake"))
            report.add("l_sf", sf, tr.lambda_sf)
            loss = T.add(loss, T.mul(sf, tr.lambda_sf))
        return loss

    def _image_g_losses(self, s_in: Tensor, x_fake: Tensor, masks: Tensor,
                        class_map: Tensor, report: LossReport, paired: bool):
        tr = self.cfg.train
        baseline = tr.loss_baseline
        aux = baseline in ("edge", "sm")
        use_sf = tr.segment_fidelity and aux and paired
        heads = ["scene"]
        if aux:
            heads.append("segmentation")
        if use_sf:
            heads.append("segments")
        out = self.models.d_image(s_in, x_fake, masks, tuple(heads))
        raw = g_loss_nonsat(out["scene_logit"])
        report.add("g_adv", raw, tr.lambda_adv)
        loss = T.mul(raw, tr.lambda_adv)
        if baseline == "sm":
            sm = semantic_matching_loss(out["seg_logits"], class_map)
            report.add("l_sm_fake", sm, tr.lambda_sm)
            loss = T.add(loss, T.mul(sm, tr.lambda_sm))
        elif baseline == "edge":
            em = edge_matching_loss(class_map, T.softmax(out["seg_logits"], axis=1))
            report.add("l_em_fake", em, tr.lambda_em)
            loss = T.add(loss, T.mul(em, tr.lambda_em))
        if use_sf:
            sf = segment_fidelity_loss(out["segment_logits"], out["skipped"], "g")
            report.add("l_sf_fake", sf, tr.lambda_sf)
            loss = T.add(loss, T.mul(sf, tr.lambda_sf))
        return loss

    def _exec_update(self, rng: Rng, step: int) -> LossReport:
        """One conditional-execution GAN update on real layout/image pairs."""
        tr = self.cfg.train
        report = LossReport()
        zero_s = tr.loss_baseline == "none"
        idx = self._batch_indices(rng.child("batch"))
        x_real = Tensor(self.data["images"][idx])
        s_np = self.data["s"][idx].copy()
        if zero_s:
            s_np[:] = 0.0
        s_in = Tensor(s_np)
        class_map = Tensor(self.data["class_map"][idx])
        masks = Tensor(self.data["a"][idx])
        # one render serves both sub-steps: the critic sees it detached
        a, cm, w, slots = self._real_exec_batch(idx, rng.child("style"))
        x_fake = self.models.executor.net.execute_maps(a, cm, w, slots,
                                                       rng.child("render"))
        self._zero_all()
        loss_d = self._image_d_losses(s_in, x_real, Tensor(x_fake.data), masks,
                                      class_map, report)
        r1 = self._maybe_r1(
            "exec", step,
            lambda t: self.models.d_image.forward_combined(t, heads=("scene",))["scene_logit"],
            np.concatenate([s_np, self.data["images"][idx]], axis=1))
        if r1 is not None:
            report.add("r1", float(r1.data) / tr.r1_interval)
            loss_d = T.add(loss_d, r1)
        loss_d.backward()
        self.opt_di.step()
        # generator step against the updated critic
        self._zero_all()
        loss_g = self._image_g_losses(s_in, x_fake, masks, class_map, report,
                                      paired=True)
        loss_g.backward()
        self.opt_g2.step()
        self.models.ema_g2.update(self.models.executor.net.parameters(),
                                  _ema_decay(tr.ema_decay, self.opt_g2.t))
        return report

    def train_execution(self, steps: int | None = None):
        tr = self.cfg.train
        steps = tr.steps_exec if steps is None else steps
        start = self.steps_done["exec"]
        for step in range(start, start + steps):
            report = self._exec_update(self.root.child(f"exec/{step}"), step)
            if step % tr.log_every == 0 or step == start + steps - 1:
                self._log("exec", step, report)
            self.steps_done["exec"] = step + 1
        return self

    # -- phase C: joint fine-tuning ------------------------------------------------------

    def _joint_update(self, rng: Rng, step: int, paired: bool) -> LossReport:
        """One end-to-end update: rollout both stages, step both critics, then
        the generators through the full graph."""
        tr = self.cfg.train
        planner = self.models.planner
        report = LossReport()
        idx = self._batch_indices(rng.child("batch"))
        if paired:
            idx_img = idx
        else:
            # pairing is never used: images come from an independent draw
            idx_img = self._batch_indices(rng.child("batch_img"))
        real_s = self.data["s"][idx]
        x_real = Tensor(self.data["images"][idx_img])
        # one end-to-end rollout serves all sub-steps; critics see it detached
        maps = planner.plan_scene_batched(tr.batch, rng.child("fake"))
        x_fake = self._render_fake(maps, rng.child("exec"))
        self._zero_all()
        real_noised = noisy_layout(Tensor(real_s), self.noise_cfg, rng.child("noise_r"))
        fake_s_noised = Tensor(maps["tensor"].data)
        if tr.noise_fake:
            fake_s_noised = noisy_layout(fake_s_noised, self.noise_cfg,
                                         rng.child("noise_f"))
        raw_dl = d_loss_nonsat(self.models.d_layout(real_noised),
                               self.models.d_layout(fake_s_noised))
        report.add("d_layout_adv", raw_dl, tr.lambda_adv)
        loss_dl = T.mul(raw_dl, tr.lambda_adv)
        r1l = self._maybe_r1("joint_dl", step, self.models.d_layout, real_noised.data)
        if r1l is not None:
            report.add("r1_layout", float(r1l.data) / tr.r1_interval)
            loss_dl = T.add(loss_dl, r1l)
        loss_dl.backward()
        self.opt_dl.step()

        self._zero_all()
        if paired:
            s_real_in = Tensor(real_s)
            s_fake_in = Tensor(maps["tensor"].data)
            class_real = Tensor(self.data["class_map"][idx])
            masks_real = Tensor(self.data["a"][idx])
        else:
            s_real_in = Tensor(np.zeros_like(real_s))
            s_fake_in = Tensor(np.zeros_like(maps["tensor"].data))
            class_real = None
            masks_real = None
        d = self.models.d_image
        heads = ("scene", "segmentation") if paired or tr.loss_baseline in ("sm", "edge") \
            else ("scene",)
        out_real = d(s_real_in, x_real, masks_real, heads)
        out_fake = d(s_fake_in, Tensor(x_fake.data), None, heads)
        raw_di = d_loss_nonsat(out_real["scene_logit"], out_fake["scene_logit"])
        report.add("d_image_adv", raw_di, tr.lambda_adv)
        loss_di = T.mul(raw_di, tr.lambda_adv)
        if paired and tr.loss_baseline == "sm":
            sm = semantic_matching_loss(out_real["seg_logits"], class_real)
            report.add("l_sm_real", sm, tr.lambda_sm)
            loss_di = T.add(loss_di, T.mul(sm, tr.lambda_sm))
        if not paired and "segmentation" in heads:
            # consistency trained on generated pairs only
            fake_class = Tensor(maps["class_map"].data)
            if tr.loss_baseline in ("sm",):
                sm = semantic_matching_loss(out_fake["seg_logits"], fake_class)
                report.add("l_sm_gen", sm, tr.lambda_sm)
                loss_di = T.add(loss_di, T.mul(sm, tr.lambda_sm))
            em = edge_matching_loss(fake_class, T.softmax(out_fake["seg_logits"], axis=1))
            report.add("l_em_gen", em, tr.lambda_em)
            loss_di = T.add(loss_di, T.mul(em, tr.lambda_em))
        r1i = self._maybe_r1(
            "joint_di", step,
            lambda t: d.forward_combined(t, heads=("scene",))["scene_logit"],
            np.concatenate([s_real_in.data, x_real.data], axis=1))
        if r1i is not None:
            report.add("r1_image", float(r1i.data) / tr.r1_interval)
            loss_di = T.add(loss_di, r1i)
        loss_di.backward()
        self.opt_di.step()

        # generator step: end-to-end through both stages, same rollout
        self._zero_all()
        fake_s_noised = maps["tensor"]
        if tr.noise_fake:
            fake_s_noised = noisy_layout(fake_s_noised, self.noise_cfg,
                                         rng.child("noise_g"))
        raw_gl = g_loss_nonsat(self.models.d_layout(fake_s_noised))
        report.add("g_layout_adv", raw_gl, tr.lambda_adv)
        loss_g = T.mul(raw_gl, tr.lambda_adv)
        s_fake_in = maps["tensor"] if paired else Tensor(np.zeros_like(maps["tensor"].data))
        out = d(s_fake_in, x_fake, maps["A"],
                ("scene", "segmentation", "segments") if paired else ("scene", "segmentation"))
        raw_gi = g_loss_nonsat(out["scene_logit"])
        report.add("g_image_adv", raw_gi, tr.lambda_adv)
        g_img = T.mul(raw_gi, tr.lambda_adv)
        loss_g = T.add(loss_g, g_img)
        if tr.loss_baseline == "sm":
            sm = semantic_matching_loss(out["seg_logits"], maps["class_map"])
            report.add("l_sm_fake", sm, tr.lambda_sm)
            loss_g = T.add(loss_g, T.mul(sm, tr.lambda_sm))
        if not paired or tr.loss_baseline == "edge":
            em = edge_matching_loss(maps["class_map"],
                                    T.softmax(out["seg_logits"], axis=1))
            report.add("l_em_fake", em, tr.lambda_em)
            loss_g = T.add(loss_g, T.mul(em, tr.lambda_em))
        if paired and tr.segment_fidelity and tr.loss_baseline in ("sm", "edge"):
            sf = segment_fidelity_loss(out["segment_logits"], out["skipped"], "g")
            report.add("l_sf_fake", sf, tr.lambda_sf)
            loss_g = T.add(loss_g, T.mul(sf, tr.lambda_sf))
        loss_g.backward()
        self.opt_g1.step()
        self.opt_g2.step()
        self.models.ema_g1.update(planner.net.parameters(),
                                  _ema_decay(tr.ema_decay, self.opt_g1.t))
        self.models.ema_g2.update(self.models.executor.net.parameters(),
                                  _ema_decay(tr.ema_decay, self.opt_g2.t))
        return report

    def finetune_joint(self, steps: int | None = None):
        """Fine-tune both stages together.

        In the paired schedule, end-to-end rollout updates interleave with
        conditional-execution updates on real layouts: training only on
        generated (soft) layouts lets the executor drift off the one-hot
        conditioning it must still serve.
        """
        tr = self.cfg.train
        steps = tr.steps_joint if steps is None else steps
        paired = tr.schedule == "paired"
        if paired and (self.steps_done["plan"] == 0 or self.steps_done["exec"] == 0):
            raise MissingCheckpoint(
                "paired fine-tuning needs the planning and execution phases "
                "(run them first or continue from their checkpoint)")
        start = self.steps_done["joint"]
        for step in range(start, start + steps):
            if paired and step % 2 == 1:
                report = self._exec_update(self.root.child(f"joint_exec/{step}"), step)
            else:
                report = self._joint_update(self.root.child(f"joint/{step}"), step, paired)
            if step % tr.log_every == 0 or step == start + steps - 1:
                self._log("joint", step, report)
            self.steps_done["joint"] = step + 1
        return self

    # -- schedule orchestration ------------------------------------------------------------

    def run_pipeline(self):
        """Run the configured schedule end to end, checkpointing after each phase."""
        schedule = self.cfg.train.schedule
        if schedule == "paired":
            self.train_planning()
            self.save(self.outdir / "phase_a.gf2c")
            self.train_execution()
            self.save(self.outdir / "phase_b.gf2c")
            self.finetune_joint()
        elif schedule == "unpaired":
            self.train_planning()
            self.save(self.outdir / "phase_a.gf2c")
            self.finetune_joint()
        elif schedule == "parallel":
            self.finetune_joint()
        else:
            raise Unsupported(f"schedule {schedule!r}")
        final = self.outdir / "final.gf2c"
        self.save(final)
        self.close()
        return final

    # -- persistence --------------------------------------------------------------------

    def save(self, path):
        m = self.models
        tensors: dict[str, np.ndarray] = {}
        for prefix, params in (("g1", m.planner.net.parameters()),
                               ("g2", m.executor.net.parameters()),
                               ("dl", m.d_layout.parameters()),
                               ("di", m.d_image.parameters())):
            for k, p in params.items():
                tensors[f"{prefix}.{k}"] = p.data
        for prefix, ema in (("ema_g1", m.ema_g1), ("ema_g2", m.ema_g2)):
            for k, arr in ema.shadow.items():
                tensors[f"{prefix}.{k}"] = arr
        for prefix, opt in (("opt_g1", self.opt_g1), ("opt_g2", self.opt_g2),
                            ("opt_dl", self.opt_dl), ("opt_di", self.opt_di)):
            tensors.update(opt.state_tensors(prefix))
        meta = {
            "config": to_dict(self.cfg),
            "count_dist": {"mu": m.planner.count.mu, "sigma": m.planner.count.sigma,
                           "k_min": m.planner.count.k_min, "k_max": m.planner.count.k_max},
            "steps_done": self.steps_done,
            "opt_t": {"g1": self.opt_g1.t, "g2": self.opt_g2.t,
                      "dl": self.opt_dl.t, "di": self.opt_di.t},
            "saved_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        save_checkpoint(path, tensors, meta)
        return path

    @classmethod
    def load(cls, path, dataset: Dataset, outdir=None, val_dataset: Dataset | None = None):
        entries, meta = load_checkpoint(path)
        cfg = from_dict(meta["config"])
        cd = meta["count_dist"]
        count = CountDistribution(mu=cd["mu"], sigma=cd["sigma"], k_min=cd["k_min"],
                                  k_max=cd["k_max"])
        cfg.model.count_mu = cd["mu"]
        cfg.model.count_sigma = cd["sigma"]
        models = build_models(cfg, count)
        trainer = cls(cfg, dataset, outdir or Path(path).parent, models=models,
                      val_dataset=val_dataset)
        restore_models(models, entries)
        for name, opt in (("opt_g1", trainer.opt_g1), ("opt_g2", trainer.opt_g2),
                          ("opt_dl", trainer.opt_dl), ("opt_di", trainer.opt_di)):
            opt.load_state_tensors(name, entries, meta["opt_t"][name.split("_")[1]])
        trainer.steps_done = dict(meta["steps_done"])
        return trainer


def restore_models(models: Models, entries: dict[str, np.ndarray]):
    assign_parameters(models.planner.net.parameters(), entries, "g1.")
    assign_parameters(models.executor.net.parameters(), entries, "g2.")
    assign_parameters(models.d_layout.parameters(), entries, "dl.")
    assign_parameters(models.d_image.parameters(), entries, "di.")
    for k in models.ema_g1.shadow:
        models.ema_g1.shadow[k] = entries[f"ema_g1.{k}"].copy()
    for k in models.ema_g2.shadow:
        models.ema_g2.shadow[k] = entries[f"ema_g2.{k}"].copy()


def load_models(path) -> Models:
    """Inference-side loading: rebuild the nets from a checkpoint alone."""
    entries, meta = load_checkpoint(path)
    cfg = from_dict(meta["config"])
    cd = meta["count_dist"]
    count = CountDistribution(mu=cd["mu"], sigma=cd["sigma"], k_min=cd["k_min"],
                              k_max=cd["k_max"])
    models = build_models(cfg, count)
    restore_models(models, entries)
    return models


def generate_scene(models: Models, seed: int, use_ema: bool = True):
    """Plan and render one scene; returns (layout, styles, image (H,W,3))."""
    rng = Rng(seed).child("gen")
    p_params = models.planner.net.parameters()
    e_params = models.executor.net.parameters()
    from contextlib import nullcontext

    ctx1 = models.ema_g1.applied(p_params) if use_ema else nullcontext()
    ctx2 = models.ema_g2.applied(e_params) if use_ema else nullcontext()
    with T.no_grad(), ctx1, ctx2:
        layout = models.planner.plan_scene(rng.child("plan"))
        z = rng.child("style").normal((len(layout.segments), models.cfg.model.d_z))
        styles = models.executor.map_style_latents(layout, z)
        image = models.executor.execute(layout, styles, rng.child("render"))
    return layout, styles, image
