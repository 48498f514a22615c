"""Shared argument handling for the experiment scripts."""

import argparse
import json
import logging
import os
from pathlib import Path

# single-threaded BLAS keeps runs bit-reproducible
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from fewshot_nerf.config import load_config  # noqa: E402
from fewshot_nerf.scenes import default_scene, make_dataset  # noqa: E402
from fewshot_nerf.trainer import format_table  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def run(description: str, experiment, default_iters: int, **kwargs) -> list[dict]:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(ROOT / "configs" / "train.yaml"))
    p.add_argument("--iters", type=int, default=default_iters)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--out", default=None, help="directory for per-mode runs and report.json")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config, total_iters=args.iters, seed=args.seed)
    dataset = make_dataset(default_scene(), args.views, 6)
    rows = experiment(dataset, cfg, args.out, **kwargs)
    print(format_table(rows))
    if args.out:
        Path(args.out, "report.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
