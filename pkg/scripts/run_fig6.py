"""Low-frequency PSNR with 10% of the encoding bands open, under raw, blurred and adaptive supervision."""

from _common import run

from fewshot_nerf.trainer import experiment_fig6

if __name__ == "__main__":
    run(__doc__, experiment_fig6, default_iters=2000, unlocked=0.1)
