"""Operator entry point.

Subcommands:
  gf2 data gen    --config c.json --out data/ --count N [--seed S]
  gf2 train plan|exec|joint --data data/train --out runs/x [--ckpt prev.gf2c]
  gf2 train pipeline --data data/train --out runs/x        (full schedule)
  gf2 generate    --ckpt final.gf2c --n 4 --seed 7 --out gen/
  gf2 manipulate  --ckpt final.gf2c --segment i --which structure|style --t 0.5
  gf2 eval        --ckpt final.gf2c --data data/val --out report.json
  gf2 serve       --ckpt final.gf2c --port 8008

Config precedence: file < GF2_* env vars < --set key=value overrides.
Exit codes: 0 success, 2 config/usage error, 1 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, load as load_config, to_dict
from .errors import BadConfig, Gf2Error
from .evaluate import full_report
from .rng import Rng
from .toydata import load_dataset, scenes_to_dataset, write_dataset
from .trainer import Trainer, generate_scene, load_models
from .visuals import export_visuals


def _add_common(p):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gf2", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    data = sub.add_parser("data").add_subparsers(dest="subcmd", required=True)
    gen = data.add_parser("gen")
    _add_common(gen)
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=None)
    gen.add_argument("--val-count", type=int, default=None)

    train = sub.add_parser("train").add_subparsers(dest="subcmd", required=True)
    for phase in ("plan", "exec", "joint", "pipeline"):
        tp = train.add_parser(phase)
        _add_common(tp)
        tp.add_argument("--data", required=True, help="train split directory")
        tp.add_argument("--out", required=True)
        tp.add_argument("--ckpt", default=None, help="checkpoint to continue from")
        tp.add_argument("--steps", type=int, default=None)

    g = sub.add_parser("generate")
    _add_common(g)
    g.add_argument("--ckpt", required=True)
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--out", default="gen")

    m = sub.add_parser("manipulate")
    _add_common(m)
    m.add_argument("--ckpt", required=True)
    m.add_argument("--segment", type=int, required=True)
    m.add_argument("--which", choices=["structure", "style"], required=True)
    m.add_argument("--t", type=float, default=1.0)
    m.add_argument("--out", default="manip")

    e = sub.add_parser("eval")
    _add_common(e)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="val split directory")
    e.add_argument("--out", default="eval_report.json")

    s = sub.add_parser("serve")
    _add_common(s)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8008)
    return ap


def _config(args) -> Config:
    cfg = load_config(args.config, overrides=args.overrides)
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.data.seed = args.seed
    return cfg


def cmd_data_gen(args) -> int:
    cfg = _config(args)
    count = args.count if args.count is not None else cfg.data.count
    val_count = args.val_count if args.val_count is not None else cfg.data.val_count
    out = Path(args.out)
    write_dataset(out, cfg.data, count, cfg.data.seed, cfg.model.k_max, split="train")
    if val_count:
        write_dataset(out, cfg.data, val_count, cfg.data.seed, cfg.model.k_max, split="val")
    (out / "config.json").write_text(json.dumps(to_dict(cfg), indent=1))
    print(f"wrote {count} train / {val_count} val scenes to {out}")
    return 0


def cmd_train(args, phase: str) -> int:
    cfg = _config(args)
    dataset = load_dataset(args.data)
    if args.ckpt:
        trainer = Trainer.load(args.ckpt, dataset, outdir=args.out)
    else:
        trainer = Trainer(cfg, dataset, args.out)
    if phase == "pipeline":
        final = trainer.run_pipeline()
        print(f"pipeline finished; checkpoint {final}")
        return 0
    steps = args.steps
    if phase == "plan":
        trainer.train_planning(steps)
    elif phase == "exec":
        trainer.train_execution(steps)
    elif phase == "joint":
        trainer.finetune_joint(steps)
    path = trainer.save(Path(args.out) / f"{phase}.gf2c")
    trainer.close()
    print(f"saved {path}")
    return 0


def cmd_generate(args) -> int:
    models = load_models(args.ckpt)
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    for i in range(args.n):
        layout, _styles, image = generate_scene(models, seed + i)
        export_visuals(layout, image.data, out / f"scene_{i:03d}_")
    print(f"wrote {args.n} scenes under {out}")
    return 0


def cmd_manipulate(args) -> int:
    models = load_models(args.ckpt)
    seed = args.seed if args.seed is not None else 0
    layout, styles, image = generate_scene(models, seed)
    if not 0 <= args.segment < layout.k:
        raise BadConfig(f"segment {args.segment} out of range (k={layout.k})")
    out = Path(args.out)
    export_visuals(layout, image.data, out / "before_")
    rng = Rng(seed).child("manipulate")
    from . import tensor as T
    with T.no_grad(), \
         models.ema_g1.applied(models.planner.net.parameters()), \
         models.ema_g2.applied(models.executor.net.parameters()):
        if args.which == "structure":
            z_old = layout.segments[args.segment].z
            z_tgt = rng.child("target").normal(z_old.shape)
            z_new = (1.0 - args.t) * z_old + args.t * z_tgt
            new_layout = models.planner.regenerate_segment(layout, args.segment, z_new,
                                                           rng.child("regen"))
            zs = np.stack([p[0] for p in styles.provenance])
            new_styles = models.executor.map_style_latents(new_layout, zs)
            image2 = models.executor.execute(new_layout, new_styles,
                                             Rng(seed).child("gen/render"))
        else:
            zs = np.stack([p[0] for p in styles.provenance])
            z_tgt = rng.child("target").normal(zs[args.segment].shape)
            zs[args.segment] = (1.0 - args.t) * zs[args.segment] + args.t * z_tgt
            new_layout = layout
            new_styles = models.executor.map_style_latents(layout, zs)
            image2 = models.executor.execute(layout, new_styles,
                                             Rng(seed).child("gen/render"))
    export_visuals(new_layout, image2.data, out / "after_")
    print(f"wrote before/after visuals under {out}")
    return 0


def cmd_eval(args) -> int:
    models = load_models(args.ckpt)
    dataset = load_dataset(args.data)
    val_images = np.stack(dataset.images)
    report = full_report(models, dataset.layouts, val_images,
                         seed=args.seed if args.seed is not None else 0)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=1))
    import csv

    csv_path = Path(args.out).with_suffix(".classes.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["scene", "class", "iou", "gt_frequency"])
        writer.writeheader()
        for row in report.per_class:
            writer.writerow(row)
    print(json.dumps(report.to_dict(), indent=1))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        if args.cmd == "data":
            return cmd_data_gen(args)
        if args.cmd == "train":
            return cmd_train(args, args.subcmd)
        if args.cmd == "generate":
            return cmd_generate(args)
        if args.cmd == "manipulate":
            return cmd_manipulate(args)
        if args.cmd == "eval":
            return cmd_eval(args)
        if args.cmd == "serve":
            return cmd_serve(args)
        print(f"unknown command {args.cmd}", file=sys.stderr)
        return 2
    except BadConfig as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Gf2Error as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
