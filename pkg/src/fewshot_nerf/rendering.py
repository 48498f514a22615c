"""Pinhole rays, stratified depth sampling and differentiable alpha compositing.

Cameras follow the OpenGL convention: the camera looks down its local -z axis
with +y up, and ``c2w`` maps camera coordinates to world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: np.ndarray  # (4, 4)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.c2w)[:3, 3]


@dataclass
class Rays:
    """A batch of R rays.  ``pixels`` rows are (view id, row, col)."""

    origins: np.ndarray  # (R, 3)
    directions: np.ndarray  # (R, 3), unit
    near: np.ndarray  # (R,)
    far: np.ndarray  # (R,)
    pixels: np.ndarray  # (R, 3) int

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, idx) -> Rays:
        return Rays(self.origins[idx], self.directions[idx], self.near[idx], self.far[idx], self.pixels[idx])


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix for a camera at ``eye`` looking at ``target``."""
    eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
    back = eye - target
    back /= np.linalg.norm(back)
    right = np.cross(up, back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, true_up, back, eye
    return m


def generate_rays(camera: Camera, pixels=None, view_id: int = 0, near: float = 0.0,
                  far: float = 1.0) -> Rays:
    """Back-project pixel centres through the pinhole.

    ``pixels`` is an (R, 2) array of (row, col); default is every pixel in
    row-major order.
    """
    if not near < far:
        raise ConfigError(f"need near < far, got {near}, {far}")
    k = camera.intrinsics
    if abs(np.linalg.det(k)) < 1e-12:
        raise ConfigError(f"singular intrinsics: {k.tolist()}")
    if pixels is None:
        rows, cols = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
        pixels = np.stack([rows.ravel(), cols.ravel()], axis=-1)
    pixels = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    uv1 = np.stack([pixels[:, 1] + 0.5, pixels[:, 0] + 0.5, np.ones(len(pixels))], axis=-1)
    cv = uv1 @ np.linalg.inv(k).T  # image-down, forward +z
    dirs_cam = cv * np.array([1.0, -1.0, -1.0])
    c2w = np.asarray(camera.c2w, dtype=np.float64)
    dirs = dirs_cam @ c2w[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    n = len(pixels)
    return Rays(
        origins=np.broadcast_to(c2w[:3, 3], (n, 3)).copy(),
        directions=dirs,
        near=np.full(n, float(near)),
        far=np.full(n, float(far)),
        pixels=np.column_stack([np.full(n, view_id), pixels]),
    )


def stratified_sample(near, far, n_samples: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """One depth per equal-width bin of [near, far]; bin midpoints when ``rng`` is None."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    near = np.atleast_1d(np.asarray(near, dtype=np.float64))
    far = np.atleast_1d(np.asarray(far, dtype=np.float64))
    if rng is None:
        u = np.broadcast_to(0.5, (len(near), n_samples))
    else:
        u = rng.random((len(near), n_samples))
    bins = (np.arange(n_samples) + u) / n_samples
    return near[:, None] + (far - near)[:, None] * bins


def sample_intervals(t: np.ndarray, far) -> np.ndarray:
    """Interval lengths; the last one is min(far - t_N, median of the others)."""
    t = np.atleast_2d(t)
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), t.shape[:1])
    if t.shape[1] == 1:
        return far[:, None] - t
    inner = np.diff(t, axis=1)
    last = np.minimum(far - t[:, -1], np.median(inner, axis=1))
    return np.concatenate([inner, last[:, None]], axis=1)


@dataclass
class RenderedPixel:
    c_bar: ad.Value  # (R, 3)
    beta_bar2: ad.Value  # (R,)
    weights: ad.Value  # (R, N)
    alphas: ad.Value  # (R, N)
    transmittances: ad.Value  # (R, N)
    residual_transmittance: ad.Value  # (R,)


def composite(sigma, deltas, colors, beta2=None) -> RenderedPixel:
    """Alpha-composite N samples per ray.

    sigma, deltas: (R, N); colors: (R, N, 3); beta2: (R, N) or None.
    Colour mean is sum(w_i c_i); variance is sum(w_i^2 beta2_i) under the
    independence assumption.
    """
    sigma, colors = ad.const(sigma), ad.const(colors)
    tau = sigma * ad.const(np.asarray(deltas, dtype=sigma.dtype))
    trans = ad.exp(-ad.cumsum(tau, axis=-1, exclusive=True))
    alphas = 1.0 - ad.exp(-tau)
    w = trans * alphas
    residual = ad.exp(-ad.sum(tau, axis=-1))
    c_bar = ad.sum(w.reshape(w.shape + (1,)) * colors, axis=-2)
    if beta2 is None:
        bb = ad.const(np.zeros(w.shape[0], dtype=w.dtype))
    else:
        bb = ad.sum(w * w * ad.const(beta2), axis=-1)
    return RenderedPixel(c_bar, bb, w, alphas, trans, residual)


def ray_density(alphas) -> ad.Value:
    """Opacity normalised along each ray; rays with no opacity get 1/N."""
    alphas = ad.const(alphas)
    total = ad.sum(alphas, axis=-1, keepdims=True)
    empty = (total.data == 0).astype(alphas.dtype)
    n = alphas.shape[-1]
    return alphas / (total + empty) + empty * (1.0 / n)
