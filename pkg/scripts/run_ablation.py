"""Held-out PSNR / SSIM for Baseline, Model-A/B/C and the full objective on the 3-view scene."""

from _common import run

from fewshot_nerf.trainer import experiment_ablation

if __name__ == "__main__":
    run(__doc__, experiment_ablation, default_iters=5000)
