"""Command-line entry point.

    fewshot-nerf make-scene --views 3 --out data/
    fewshot-nerf train --data data/ --out runs/full --mode full [--config cfg.yaml]
    fewshot-nerf eval --run runs/full --data data/
    fewshot-nerf render --run runs/full --pose 45,30 --out img.png
    fewshot-nerf fig6 | ablate | compare-reg --data data/ --out runs/exp

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import MODES, MODE_ALIASES, dump_config, load_config, load_yaml
from .errors import ConfigError, DataError, DivergenceError
from .scenes import SceneRenderSpec, default_scene, make_dataset, ring_camera, scene_from_dict
from .supervision import load_dataset, write_dataset, write_png
from .trainer import (
    Trainer,
    experiment_ablation,
    experiment_compare_reg,
    experiment_fig6,
    format_table,
    train,
)

log = logging.getLogger("fewshot_nerf")

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage, which matches the config-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _prepare_out(path, overwrite: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise ConfigError(f"output directory {out} is not empty (pass --overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args):
    overrides = {k: getattr(args, k, None) for k in ("mode", "seed", "total_iters")}
    return load_config(args.config, **overrides)


def _load_run(run_dir, data_dir) -> Trainer:
    run = Path(run_dir)
    if not (run / "config.yaml").exists():
        raise DataError(f"no config.yaml in run directory {run}")
    ckpt = run / "checkpoint.npz"
    if not ckpt.exists():
        raise DataError(f"no checkpoint.npz in run directory {run}")
    cfg = load_config(run / "config.yaml")
    dataset = load_dataset(data_dir)
    return Trainer(cfg, dataset, resume=ckpt)


# ------------------------------------------------------------------ commands


def cmd_make_scene(args) -> int:
    scene = scene_from_dict(load_yaml(args.scene)) if args.scene else default_scene()
    if args.views not in (3, 6, 9):
        raise ConfigError(f"--views must be 3, 6 or 9, got {args.views}")
    spec = SceneRenderSpec(width=args.size, height=args.size, focal=args.focal)
    out = _prepare_out(args.out, args.overwrite)
    write_dataset(make_dataset(scene, args.views, args.n_test, spec), out)
    print(f"wrote {args.views} train + {args.n_test} test views to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    dataset = load_dataset(args.data)
    if args.resume is None:
        out = _prepare_out(args.out, args.overwrite)
    else:
        out = Path(args.out)
    result = train(cfg, dataset, out, resume=args.resume)
    if result.report is not None:
        print(result.report.table())
    print(f"run written to {out}")
    return 0


def cmd_eval(args) -> int:
    trainer = _load_run(args.run, args.data)
    views = trainer.dataset.train if args.split == "train" else trainer.dataset.test
    if not views:
        raise DataError(f"dataset has no {args.split} views")
    report, preds = trainer.evaluate(views)
    out = Path(args.out) if args.out else Path(args.run) / f"eval_{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    dump_config(trainer.cfg, out / "config.yaml")
    report.write(out / "eval.json")
    for v, img in zip(views, preds):
        write_png(out / f"{args.split}_{v.view_id:03d}.png", img, 8)
    print(report.table())
    return 0


def cmd_render(args) -> int:
    trainer = _load_run(args.run, args.data)
    template = trainer.dataset.views[0].camera
    try:
        az, el = (float(x) for x in args.pose.split(","))
    except ValueError:
        raise ConfigError(f"--pose expects 'azimuth,elevation' in degrees, got {args.pose!r}") from None
    spec = SceneRenderSpec(width=template.width, height=template.height, focal=template.fx,
                           radius=args.radius)
    cam = ring_camera(spec, az, el)
    img, beta = trainer.render_camera(cam, trainer.cfg.total_iters)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_config(trainer.cfg, out.with_suffix(".yaml"))
    write_png(out, img, 8)
    print(f"rendered {out} (mean beta_bar2 {float(np.mean(beta)):.4g})")
    return 0


def _experiment(args, fn) -> int:
    cfg = _run_config(args)
    dataset = load_dataset(args.data)
    out = _prepare_out(args.out, args.overwrite)
    dump_config(cfg, out / "config.yaml")
    rows = fn(dataset, cfg, out)
    (out / "report.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(format_table(rows))
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fewshot-nerf", description="Few-view radiance field training on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-scene", help="render an analytic scene into a dataset directory")
    s.add_argument("--scene", help="scene YAML (default: the built-in two-spheres-and-box)")
    s.add_argument("--views", type=int, default=3, help="training views: 3, 6 or 9")
    s.add_argument("--n-test", type=int, default=6)
    s.add_argument("--size", type=int, default=64, help="image width and height")
    s.add_argument("--focal", type=float, default=100.0)
    s.add_argument("--out", required=True)
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_make_scene)

    modes = list(MODES) + list(MODE_ALIASES)

    def run_flags(q, need_out=True):
        q.add_argument("--config", help="TrainConfig YAML; missing keys take defaults")
        q.add_argument("--data", required=True, help="dataset directory")
        q.add_argument("--out", required=need_out)
        q.add_argument("--seed", type=int)
        q.add_argument("--total-iters", type=int, dest="total_iters")
        q.add_argument("--overwrite", action="store_true")

    t = sub.add_parser("train", help="train one model")
    run_flags(t)
    t.add_argument("--mode", choices=modes)
    t.add_argument("--resume", help="checkpoint to continue from (writes into --out)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--run", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--out", help="report directory (default: <run>/eval_<split>)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render a trained run from a ring pose")
    r.add_argument("--run", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--pose", required=True, help="azimuth,elevation in degrees")
    r.add_argument("--radius", type=float, default=4.0)
    r.add_argument("--out", required=True, help="output PNG")
    r.set_defaults(func=cmd_render)

    for name, fn, help_ in (("fig6", experiment_fig6, "low-frequency PSNR under three supervisions"),
                            ("ablate", experiment_ablation, "Baseline / A / B / C / full ablation table"),
                            ("compare-reg", experiment_compare_reg, "ray regularizer comparison")):
        x = sub.add_parser(name, help=help_)
        run_flags(x)
        x.set_defaults(func=lambda a, fn=fn: _experiment(a, fn))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(message)s")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        bad = {k: v for k, v in exc.breakdown.items() if not np.isfinite(v)}
        if bad:
            print(f"offending terms: {', '.join(sorted(bad))}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
