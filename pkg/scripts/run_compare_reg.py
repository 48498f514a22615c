"""Floater mass and held-out PSNR for the ray regularizer variants."""

from _common import run

from fewshot_nerf.trainer import experiment_compare_reg

if __name__ == "__main__":
    run(__doc__, experiment_compare_reg, default_iters=5000)
