"""Training configuration: a flat dataclass read from / dumped to YAML.

Every field has a default, so an empty file is a valid config.  Unknown keys
and bad values are reported with the line they appear on.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .encoding import EncodingConfig
from .errors import ConfigError
from .field import MlpArchitecture
from .losses import LossWeights

MODES = (
    "baseline", "model-a", "model-b", "model-c", "full",
    "linear-ablation", "adaptive-blur-ablation", "entropy", "emptiness-on-w",
)
MODE_ALIASES = {"+L_s": "model-a", "+L_u": "model-b", "+L_s+L_u": "model-c"}


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ConfigError(f"unknown loss mode {mode!r}; choose from {', '.join(MODES)}")
    return mode


@dataclass(frozen=True)
class ModeTerms:
    """Which loss terms a mode switches on."""

    two_phase: bool = False
    adaptive: bool = False  # L_u
    regularizer: str | None = None  # "ray-density" | "entropy" | "emptiness"
    linear: bool = False
    decaying_blur: bool = False


MODE_TERMS = {
    "baseline": ModeTerms(),
    "model-a": ModeTerms(two_phase=True),
    "model-b": ModeTerms(adaptive=True),
    "model-c": ModeTerms(two_phase=True, adaptive=True),
    "full": ModeTerms(two_phase=True, adaptive=True, regularizer="ray-density"),
    "linear-ablation": ModeTerms(linear=True),
    "adaptive-blur-ablation": ModeTerms(decaying_blur=True),
    "entropy": ModeTerms(two_phase=True, adaptive=True, regularizer="entropy"),
    "emptiness-on-w": ModeTerms(two_phase=True, adaptive=True, regularizer="emptiness"),
}


@dataclass
class TrainConfig:
    mode: str = "full"
    seed: int = 0
    total_iters: int = 5000
    # None means "derive from total_iters": T = 0.9 * total, T_s = 0.25 * total
    mask_horizon: int | None = None
    phase_switch: int | None = None
    mask_schedule: str = "monotone"
    # pin the mask at this unlocked fraction for the whole run (None = scheduled)
    frozen_mask_fraction: float | None = None
    batch_size: int = 1024
    n_samples: int = 64
    perturb: bool = True
    lr: float = 5e-3
    lr_final: float = 5e-4
    warmup_frac: float = 0.02
    lambda_u: float = 0.01
    lambda_o: float = 0.01
    lambda_r_init: float = 1e-5
    lambda_r_final: float = 1e-3
    lambda_r_ramp: int = 512
    s: float = 10.0
    near_fraction: float = 0.1
    blur_kernel: int = 3
    blur_sigma: float = 0.8
    blur_sigma_max: float = 2.0
    blur_refresh: int = 100
    blur_kernel_max: int = 7
    adaptive_target: str = "two-phase"  # target of L_u: "two-phase" | "raw"
    edge_threshold: float = 0.1
    k_pos: int = 8
    k_dir: int = 4
    depth: int = 4
    width: int = 64
    skips: tuple[int, ...] = (2,)
    head_width: int = 32
    beta_min: float = 1e-4
    dtype: str = "float64"
    log_every: int = 1
    checkpoint_every: int = 0
    eval_samples: int | None = None
    probe_fractions: tuple[float, ...] = (0.25, 1.0)  # of mask_horizon; 1/beta_bar2 probes

    def __post_init__(self):
        self.mode = canonical_mode(self.mode)
        self.skips = tuple(self.skips)
        self.probe_fractions = tuple(self.probe_fractions)
        if self.mask_horizon is None:
            self.mask_horizon = max(1, round(0.9 * self.total_iters))
        if self.phase_switch is None:
            self.phase_switch = round(0.25 * self.total_iters)
        self.validate()

    def validate(self) -> None:
        if self.total_iters < 1:
            raise ConfigError("total_iters must be >= 1")
        if not 1 <= self.mask_horizon <= self.total_iters:
            raise ConfigError("mask_horizon must lie in [1, total_iters]")
        if not 0 <= self.phase_switch <= self.total_iters:
            raise ConfigError("phase_switch must lie in [0, total_iters]")
        if self.batch_size < 1 or self.n_samples < 2:
            raise ConfigError("batch_size must be >= 1 and n_samples >= 2")
        if self.mask_schedule not in ("monotone", "closed_form"):
            raise ConfigError(f"unknown mask_schedule {self.mask_schedule!r}")
        if self.frozen_mask_fraction is not None and not 0 <= self.frozen_mask_fraction <= 1:
            raise ConfigError("frozen_mask_fraction must lie in [0, 1]")
        if self.adaptive_target not in ("two-phase", "raw"):
            raise ConfigError(f"unknown adaptive_target {self.adaptive_target!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.lr <= 0 or self.lr_final <= 0:
            raise ConfigError("learning rates must be positive")
        if self.blur_kernel % 2 == 0 or self.blur_kernel_max % 2 == 0:
            raise ConfigError("blur kernel sizes must be odd")
        self.loss_weights  # noqa: B018  (validates the weights)
        self.encoding  # noqa: B018
        self.architecture  # noqa: B018

    @property
    def terms(self) -> ModeTerms:
        return MODE_TERMS[self.mode]

    @property
    def near_window(self) -> int:
        return max(1, math.ceil(self.near_fraction * self.n_samples))

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_u, self.lambda_o, self.lambda_r_init, self.lambda_r_final,
                           self.lambda_r_ramp, self.s, self.phase_switch, self.mask_horizon)

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.k_pos, self.k_dir)

    @property
    def architecture(self) -> MlpArchitecture:
        return MlpArchitecture(self.depth, self.width, self.skips, self.head_width, self.beta_min)

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["skips"] = list(self.skips)
        d["probe_fractions"] = list(self.probe_fractions)
        return d


# ---------------------------------------------------------------- YAML I/O


LINE_KEY = "__line__"
KEY_LINES = "__key_lines__"


class _LineLoader(yaml.SafeLoader):
    """SafeLoader that records the 1-based source line of each mapping and of its keys."""

    def construct_mapping(self, node, deep=False):
        mapping = super().construct_mapping(node, deep=deep)
        mapping[LINE_KEY] = node.start_mark.line + 1
        mapping[KEY_LINES] = {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k.value, str)}
        return mapping


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"{path}: {exc.problem}", line) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping", 1)
    return data


def pop_line(d: dict) -> int | None:
    return d.pop(LINE_KEY, None)


def reject_unknown(d: dict, allowed: set[str], line: int | None) -> None:
    """Raise on keys outside ``allowed``, citing the line of the first one."""
    key_lines = d.pop(KEY_LINES, {})
    unknown = sorted(set(d) - allowed - {LINE_KEY}, key=lambda k: (key_lines.get(k, 0), str(k)))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(map(str, unknown))}", key_lines.get(unknown[0], line))


def config_from_dict(d: dict, **overrides) -> TrainConfig:
    d = dict(d)
    line = pop_line(d)
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    reject_unknown(d, names, line)
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**d)
    except ConfigError as exc:
        raise ConfigError(str(exc), line) from None
    except TypeError as exc:
        raise ConfigError(str(exc), line) from None


def load_config(path=None, **overrides) -> TrainConfig:
    return config_from_dict(load_yaml(path) if path else {}, **overrides)


def dump_config(cfg: TrainConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
