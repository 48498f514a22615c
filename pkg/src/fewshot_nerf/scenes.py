"""Analytic density/colour scenes and their ground-truth renders.

Primitives are spheres and boxes described by signed distance.  Density is the
primitive amplitude inside, tapered to zero with a raised cosine over the
outer ``taper`` fraction of the primitive's radius (its smallest half-extent
for boxes).  A box may carry a 3D checker albedo to create high-frequency
pixels.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .rendering import Camera, composite, generate_rays, look_at, sample_intervals, stratified_sample
from .supervision import Dataset, PosedImage

CHECKER_RAMP = 0.3  # sine level at which a checker border ramp saturates


@dataclass(frozen=True)
class Primitive:
    shape: str  # "sphere" | "box"
    center: tuple[float, float, float]
    size: float | tuple[float, float, float]  # radius, or box half-extents
    albedo: tuple[float, float, float]
    density: float = 40.0
    checker_albedo: tuple[float, float, float] | None = None
    checker_cell: float = 0.1

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ConfigError(f"unknown primitive shape {self.shape!r}")
        if self.density < 0:
            raise ConfigError("primitive density must be non-negative")
        if np.any(np.asarray(self.size) <= 0):
            raise ConfigError("primitive size must be positive")

    @property
    def radius(self) -> float:
        return float(np.min(self.size))

    def sdf(self, x: np.ndarray) -> np.ndarray:
        p = x - np.asarray(self.center)
        if self.shape == "sphere":
            return np.linalg.norm(p, axis=-1) - float(self.size)
        q = np.abs(p) - np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        half = np.broadcast_to(np.asarray(self.size, dtype=np.float64), (3,))
        return np.asarray(self.center) - half, np.asarray(self.center) + half

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(np.broadcast_to(np.asarray(self.size, dtype=np.float64), (3,))))

    def albedo_at(self, x: np.ndarray) -> np.ndarray:
        base = np.broadcast_to(np.asarray(self.albedo, dtype=np.float64), x.shape)
        if self.checker_albedo is None:
            return base
        # per-axis square waves with short linear ramps at the cell borders; their
        # product is +1 on even cells and -1 on odd ones
        waves = np.clip(np.sin(np.pi * (x - np.asarray(self.center)) / self.checker_cell) / CHECKER_RAMP, -1, 1)
        odd = 0.5 * (1.0 - np.prod(waves, axis=-1, keepdims=True))
        return base + odd * (np.asarray(self.checker_albedo) - base)


@dataclass(frozen=True)
class AnalyticScene:
    primitives: tuple[Primitive, ...]
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds: tuple[tuple[float, ...], tuple[float, ...]] = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
    taper: float = 0.05
    name: str = "custom"

    def __post_init__(self):
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        for p in self.primitives:
            a, b = p.extent()
            if np.any(a < lo) or np.any(b > hi):
                raise ConfigError(f"primitive at {p.center} leaves the scene bounds")


def default_scene() -> AnalyticScene:
    """"two-spheres-and-box": two plain spheres and a checkered box."""
    return AnalyticScene(
        primitives=(
            Primitive("sphere", (-0.45, 0.1, 0.05), 0.38, (0.85, 0.25, 0.2)),
            Primitive("sphere", (0.4, 0.35, -0.05), 0.3, (0.2, 0.55, 0.85)),
            Primitive("box", (0.1, -0.45, -0.2), (0.38, 0.24, 0.24), (0.95, 0.9, 0.3),
                      checker_albedo=(0.15, 0.3, 0.1), checker_cell=0.12),
        ),
        name="two-spheres-and-box",
    )


def _taper(sdf: np.ndarray, width: float) -> np.ndarray:
    s = np.clip((sdf + width) / width, 0.0, 1.0)  # 0 deep inside, 1 at the surface
    return 0.5 * (1.0 + np.cos(math.pi * s))


def eval_scene(scene: AnalyticScene, x) -> tuple[np.ndarray, np.ndarray]:
    """Albedo (P, 3) and density (P,) at points ``x`` (P, 3)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    total = np.zeros(len(x))
    tint = np.zeros((len(x), 3))
    for p in scene.primitives:
        d = p.density * _taper(p.sdf(x), scene.taper * p.radius)
        total += d
        tint += d[:, None] * p.albedo_at(x)
    albedo = np.where(total[:, None] > 0, tint / np.maximum(total, 1e-300)[:, None],
                      np.asarray(scene.background, dtype=np.float64))
    return albedo, total


@dataclass(frozen=True)
class SceneRenderSpec:
    width: int = 64
    height: int = 64
    focal: float = 100.0
    radius: float = 4.0
    elevation_deg: float = 25.0
    test_elevation_deg: float = 35.0
    near: float = 2.0
    far: float = 6.0
    oracle_samples: int = 1024
    train_samples: int = 64

    def __post_init__(self):
        if self.oracle_samples < 4 * self.train_samples:
            raise ConfigError("oracle sample count must be at least 4x the training sample count")


def ring_camera(spec: SceneRenderSpec, azimuth_deg: float, elevation_deg: float) -> Camera:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    eye = spec.radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return Camera(spec.focal, spec.focal, spec.width / 2, spec.height / 2, spec.width, spec.height, look_at(eye))


def occupied_span(scene: AnalyticScene, origins: np.ndarray, directions: np.ndarray, near, far):
    """Per-ray depth range covering every primitive's bounding sphere.

    Returns (t0, t1, hit); density is exactly zero outside [t0, t1].
    """
    n = len(origins)
    t0, t1 = np.full(n, np.inf), np.full(n, -np.inf)
    for p in scene.primitives:
        oc = origins - np.asarray(p.center)
        b = np.sum(oc * directions, axis=-1)
        disc = b * b - (np.sum(oc * oc, axis=-1) - p.bounding_radius() ** 2)
        ok = disc > 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        t0 = np.where(ok, np.minimum(t0, -b - root), t0)
        t1 = np.where(ok, np.maximum(t1, -b + root), t1)
    t0, t1 = np.maximum(t0, near), np.minimum(t1, far)
    return t0, t1, t1 > t0


def render_oracle(scene: AnalyticScene, camera: Camera, spec: SceneRenderSpec, view_id: int = 0,
                  n_samples: int | None = None, chunk: int = 1024) -> PosedImage:
    """Ground-truth image by dense midpoint quadrature of the analytic field.

    The samples span only the stretch of each ray that crosses a primitive's
    bounding sphere; the density is zero everywhere else, so the integral is
    unchanged and the quadrature is finer.
    """
    n = n_samples or spec.oracle_samples
    rays = generate_rays(camera, view_id=view_id, near=spec.near, far=spec.far)
    bg = np.asarray(scene.background, dtype=np.float64)
    out = np.tile(bg, (len(rays), 1))
    alpha_sum = np.zeros(len(rays))
    t0, t1, hit = occupied_span(scene, rays.origins, rays.directions, rays.near, rays.far)
    idx = np.flatnonzero(hit)
    with ad.no_grad():
        for s in range(0, len(idx), chunk):
            sel = idx[s:s + chunk]
            r = rays[sel]
            t = stratified_sample(t0[sel], t1[sel], n)
            pts = r.origins[:, None] + t[..., None] * r.directions[:, None]
            albedo, dens = eval_scene(scene, pts.reshape(-1, 3))
            px = composite(dens.reshape(t.shape), sample_intervals(t, t1[sel]), albedo.reshape(t.shape + (3,)))
            out[sel] = px.c_bar.data + px.residual_transmittance.data[:, None] * bg
            alpha_sum[sel] = 1.0 - px.residual_transmittance.data
    img = out.reshape(camera.height, camera.width, 3)
    mask = (alpha_sum > 0.5).reshape(camera.height, camera.width)
    return PosedImage(np.clip(img, 0.0, 1.0), camera, view_id, mask)


def make_dataset(scene: AnalyticScene, n_train: int = 3, n_test: int = 6,
                 spec: SceneRenderSpec | None = None) -> Dataset:
    """Evenly spaced training views and interleaved held-out views."""
    if n_train not in (3, 6, 9):
        raise ConfigError(f"n_train must be 3, 6 or 9, got {n_train}")
    if n_test < 1:
        raise ConfigError("n_test must be >= 1")
    spec = spec or SceneRenderSpec()
    train = [render_oracle(scene, ring_camera(spec, 360.0 * i / n_train, spec.elevation_deg), spec, view_id=i)
             for i in range(n_train)]
    test = []
    for j in range(n_test):
        az = 360.0 * (j + 0.5) / n_test
        test.append(render_oracle(scene, ring_camera(spec, az, spec.test_elevation_deg), spec,
                                  view_id=n_train + j))
    meta = {"scene": scene.name, "n_train": n_train, "n_test": n_test,
            "train_samples": spec.train_samples, "oracle_samples": spec.oracle_samples,
            "scene_config": scene_to_dict(scene)}
    return Dataset(train, test, spec.near, spec.far, np.asarray(scene.bounds, dtype=np.float64),
                   np.asarray(scene.background, dtype=np.float64), meta)


def floater_grid(scene: AnalyticScene, resolution: int = 32) -> np.ndarray:
    """Cell centres of a regular grid over the bounds where the scene is empty."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in scene.bounds)
    axes = [lo[i] + (np.arange(resolution) + 0.5) * (hi[i] - lo[i]) / resolution for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    _, dens = eval_scene(scene, pts)
    return pts[dens == 0]


def floater_mass(density_fn: Callable[[np.ndarray], np.ndarray], scene: AnalyticScene,
                 resolution: int = 32) -> float:
    """Mean predicted density over grid points where the true density is zero."""
    pts = floater_grid(scene, resolution)
    return float(np.mean(density_fn(pts)))


# ------------------------------------------------------------- scene config


def scene_from_dict(cfg: dict) -> AnalyticScene:
    """Build a scene from a parsed config mapping (see ``configs/scene.yaml``)."""
    from .config import pop_line, reject_unknown

    cfg = dict(cfg)
    line = pop_line(cfg)
    reject_unknown(cfg, {"name", "background", "bounds", "taper", "primitives"}, line)
    prims = []
    for raw in cfg.get("primitives", []):
        raw = dict(raw)
        pline = pop_line(raw)
        reject_unknown(raw, {"shape", "center", "size", "albedo", "density", "checker_albedo", "checker_cell"}, pline)
        try:
            size = raw["size"]
            prims.append(Primitive(
                shape=raw["shape"], center=tuple(raw["center"]),
                size=tuple(size) if isinstance(size, (list, tuple)) else float(size),
                albedo=tuple(raw["albedo"]), density=float(raw.get("density", 40.0)),
                checker_albedo=tuple(raw["checker_albedo"]) if raw.get("checker_albedo") else None,
                checker_cell=float(raw.get("checker_cell", 0.1)),
            ))
        except KeyError as exc:
            raise ConfigError(f"primitive missing field {exc}", pline) from None
        except ConfigError as exc:
            raise ConfigError(str(exc), pline) from None
    if not prims:
        raise ConfigError("scene needs at least one primitive", line)
    try:
        return AnalyticScene(
            primitives=tuple(prims),
            background=tuple(cfg.get("background", (0.0, 0.0, 0.0))),
            bounds=tuple(tuple(b) for b in cfg.get("bounds", ((-1.5,) * 3, (1.5,) * 3))),
            taper=float(cfg.get("taper", 0.05)),
            name=cfg.get("name", "custom"),
        )
    except ConfigError as exc:
        raise ConfigError(str(exc), line) from None


def scene_to_dict(scene: AnalyticScene) -> dict:
    prims = []
    for p in scene.primitives:
        d = {"shape": p.shape, "center": list(p.center),
             "size": list(p.size) if isinstance(p.size, tuple) else p.size,
             "albedo": list(p.albedo), "density": p.density}
        if p.checker_albedo is not None:
            d["checker_albedo"] = list(p.checker_albedo)
            d["checker_cell"] = p.checker_cell
        prims.append(d)
    return {"name": scene.name, "background": list(scene.background),
            "bounds": [list(b) for b in scene.bounds], "taper": scene.taper, "primitives": prims}
