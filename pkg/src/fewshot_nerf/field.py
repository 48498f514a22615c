"""MLP radiance field returning color mean, color variance and density.

Position features run through a ReLU trunk (with one skip connection that
re-injects them); density is read off the trunk, while color and variance
share a small head that also sees the direction features.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoding import EncodingConfig
from .errors import ConfigError, DataError

CHECKPOINT_VERSION = 1


class FieldError(FloatingPointError):
    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite activations in layer {layer!r}")


@dataclass(frozen=True)
class MlpArchitecture:
    depth: int = 4
    width: int = 64
    skips: tuple[int, ...] = (2,)
    head_width: int = 32
    beta_min: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "skips", tuple(self.skips))
        if self.depth < 1 or self.width < 1 or self.head_width < 1:
            raise ConfigError("depth, width and head_width must be positive")
        if any(not 0 < s < self.depth for s in self.skips):
            raise ConfigError(f"skip indices must lie in (0, {self.depth}), got {self.skips}")
        if self.beta_min <= 0:
            raise ConfigError("beta_min must be positive")


@dataclass
class FieldOutput:
    c: ad.Value  # (P, 3) in [0, 1]
    beta2: ad.Value  # (P,) >= beta_min
    sigma: ad.Value  # (P,) >= 0


def layer_shapes(arch: MlpArchitecture, enc: EncodingConfig) -> dict[str, tuple[int, int]]:
    """(fan_in, fan_out) of every dense layer, in evaluation order."""
    shapes = {}
    fan_in = enc.pos_dim
    for i in range(arch.depth):
        if i in arch.skips:
            fan_in += enc.pos_dim
        shapes[f"trunk{i}"] = (fan_in, arch.width)
        fan_in = arch.width
    shapes["sigma"] = (arch.width, 1)
    shapes["head"] = (arch.width + enc.dir_dim, arch.head_width)
    shapes["rgb"] = (arch.head_width, 3)
    shapes["beta"] = (arch.head_width, 1)
    return shapes


def parameter_count(arch: MlpArchitecture, enc: EncodingConfig) -> int:
    return int(sum(i * o + o for i, o in layer_shapes(arch, enc).values()))


class RadianceField:
    def __init__(self, arch: MlpArchitecture | None = None, enc: EncodingConfig | None = None,
                 seed: int = 0, dtype=np.float64):
        self.arch = arch or MlpArchitecture()
        self.enc = enc or EncodingConfig()
        self.dtype = np.dtype(dtype)
        self.params: dict[str, ad.Parameter] = init_parameters(self.arch, self.enc, seed, self.dtype)

    @property
    def parameters(self) -> list[ad.Parameter]:
        return list(self.params.values())

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _dense(self, name: str, x):
        return ad.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    @staticmethod
    def _check(name: str, v: ad.Value) -> ad.Value:
        if not np.all(np.isfinite(v.data)):
            raise FieldError(name)
        return v

    def query(self, x_enc, d_enc) -> FieldOutput:
        """Evaluate the field on (P, pos_dim) and (P, dir_dim) features."""
        x_enc, d_enc = ad.const(x_enc), ad.const(d_enc)
        if x_enc.shape[-1] != self.enc.pos_dim or d_enc.shape[-1] != self.enc.dir_dim:
            raise ConfigError(
                f"feature widths {x_enc.shape[-1]}, {d_enc.shape[-1]} do not match "
                f"architecture ({self.enc.pos_dim}, {self.enc.dir_dim})"
            )
        h = x_enc
        for i in range(self.arch.depth):
            if i in self.arch.skips:
                h = ad.concat([h, x_enc], axis=-1)
            h = self._check(f"trunk{i}", ad.relu(self._dense(f"trunk{i}", h)))
        # adjoints from nearly occluded samples are ~1e-30; flushing them here keeps
        # the backward matmuls out of slow subnormal arithmetic
        sigma = ad.softplus(ad.flush_tiny_grad(self._check("sigma", self._dense("sigma", h)))).reshape(-1)
        g = self._check("head", ad.relu(self._dense("head", ad.concat([h, d_enc], axis=-1))))
        c = ad.sigmoid(ad.flush_tiny_grad(self._check("rgb", self._dense("rgb", g))))
        beta = ad.flush_tiny_grad(self._check("beta", self._dense("beta", g)))
        beta2 = ad.softplus(beta).reshape(-1) + self.arch.beta_min
        return FieldOutput(c=c, beta2=beta2, sigma=sigma)

    def density(self, x_enc) -> np.ndarray:
        """Density only, forward mode; skips the color head."""
        with ad.no_grad():
            x_enc = ad.const(np.asarray(x_enc, dtype=self.dtype))
            h = x_enc
            for i in range(self.arch.depth):
                if i in self.arch.skips:
                    h = ad.concat([h, x_enc], axis=-1)
                h = ad.relu(self._dense(f"trunk{i}", h))
            return ad.softplus(self._dense("sigma", h)).data.reshape(-1)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint lacks parameter {name!r}")
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ConfigError(f"parameter {name!r}: checkpoint shape {a.shape} != model shape {p.shape}")
            p.data[...] = a


def init_parameters(arch: MlpArchitecture, enc: EncodingConfig, seed: int,
                    dtype=np.float64) -> dict[str, ad.Parameter]:
    """Uniform fan-in initialisation (bound sqrt(6 / fan_in)); zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (fan_in, fan_out) in layer_shapes(arch, enc).items():
        bound = np.sqrt(6.0 / fan_in)
        if name in ("rgb", "beta", "sigma"):
            bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        params[f"{name}.w"] = ad.Parameter(f"{name}.w", w)
        params[f"{name}.b"] = ad.Parameter(f"{name}.b", np.zeros(fan_out, dtype=dtype))
    return params


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(path, model: RadianceField, iteration: int, extra: dict | None = None,
                    arrays: dict[str, np.ndarray] | None = None) -> Path:
    """Write parameters, optimizer arrays and metadata to one ``.npz`` file."""
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "encoding": asdict(model.enc),
        "architecture": asdict(model.arch),
        "dtype": model.dtype.name,
        **(extra or {}),
    }
    payload = {f"param/{k}": v for k, v in model.state_arrays().items()}
    payload.update(arrays or {})
    payload["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


@dataclass
class Checkpoint:
    model: RadianceField
    iteration: int
    meta: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k] for k in z.files if k != "meta"}
    arch_kw = dict(meta["architecture"])
    arch_kw["skips"] = tuple(arch_kw["skips"])
    model = RadianceField(MlpArchitecture(**arch_kw), EncodingConfig(**meta["encoding"]),
                          dtype=np.dtype(meta["dtype"]))
    model.load_arrays({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    others = {k: v for k, v in arrays.items() if not k.startswith("param/")}
    return Checkpoint(model, int(meta["iteration"]), meta, others)
