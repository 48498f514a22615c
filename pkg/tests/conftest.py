import os

# single-threaded BLAS so that repeated runs are bit-identical
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from fewshot_nerf.config import TrainConfig  # noqa: E402
from fewshot_nerf.scenes import SceneRenderSpec, default_scene, make_dataset  # noqa: E402

TINY_SPEC = SceneRenderSpec(width=16, height=16, focal=25.0, oracle_samples=128, train_samples=16)

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**changes) -> TrainConfig:
    base = dict(total_iters=12, batch_size=48, n_samples=8, depth=2, width=16, skips=(1,), head_width=8,
                k_pos=4, k_dir=2, lambda_r_ramp=6, blur_refresh=4)
    base.update(changes)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    return make_dataset(default_scene(), 3, 2, TINY_SPEC)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
