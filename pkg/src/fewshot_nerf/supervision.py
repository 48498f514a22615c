"""Ground-truth views: blurring, edge-based frequency split, dataset I/O and
ray batches.

Dataset directory layout::

    manifest.json      {"version", "width", "height", "near", "far",
                        "bounds", "background", "views": [...]}
    <view files>.png   8- or 16-bit RGB

Each manifest view entry carries ``id``, ``file``, ``split`` (train|test),
``fx``, ``fy``, ``cx``, ``cy``, a 4x4 ``c2w`` pose and an optional ``mask``
PNG used to restrict metrics to the object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError
from .rendering import Camera, Rays, generate_rays

MANIFEST_VERSION = 1


@dataclass
class PosedImage:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    camera: Camera
    view_id: int
    mask: np.ndarray | None = None  # (H, W) bool, True = evaluate

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if h < 8 or w < 8:
            raise DataError(f"view {self.view_id}: images must be at least 8x8, got {h}x{w}")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise DataError(f"view {self.view_id}: pixel values outside [0, 1]")


# ------------------------------------------------------------------ filters


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"blur kernel size must be odd and >= 1, got {size}")
    if sigma <= 0:
        raise ConfigError(f"blur sigma must be positive, got {sigma}")
    x = np.arange(size) - size // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, kernel_size: int = 3, sigma: float = 0.8) -> np.ndarray:
    """Separable normalised Gaussian blur with half-sample reflection at borders.

    ``sigma == 0`` returns the image unchanged (the end of a decaying blur
    schedule).
    """
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        if kernel_size % 2 == 0:
            raise ConfigError(f"blur kernel size must be odd, got {kernel_size}")
        return image.copy()
    k = gaussian_kernel(kernel_size, sigma)
    out = ndimage.correlate1d(image, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def luminance(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., :3] @ np.array([0.299, 0.587, 0.114])


def sobel_magnitude(image) -> np.ndarray:
    y = luminance(image)
    return np.hypot(ndimage.sobel(y, axis=0, mode="reflect"), ndimage.sobel(y, axis=1, mode="reflect"))


def classify_frequency(image, threshold: float = 0.1) -> np.ndarray:
    """True where the Sobel magnitude exceeds ``threshold`` times its image maximum."""
    if not 0 < threshold <= 1:
        raise ConfigError(f"edge threshold must lie in (0, 1], got {threshold}")
    g = sobel_magnitude(image)
    peak = g.max()
    if peak <= 0:
        return np.zeros(g.shape, dtype=bool)
    return g > threshold * peak


# ------------------------------------------------------------------ dataset


@dataclass
class Dataset:
    train: list[PosedImage]
    test: list[PosedImage]
    near: float
    far: float
    bounds: np.ndarray = field(default_factory=lambda: np.array([[-1.5] * 3, [1.5] * 3]))
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    meta: dict = field(default_factory=dict)

    @property
    def views(self) -> list[PosedImage]:
        return self.train + self.test


def read_png(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot read image {path}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DataError(f"{path}: unsupported PNG sample type {img.dtype}")
    if img.ndim == 2:
        return img.astype(np.float64) / scale
    return img[..., 2::-1].astype(np.float64) / scale


def write_png(path, image, bit_depth: int = 16) -> None:
    if bit_depth not in (8, 16):
        raise ConfigError("PNG bit depth must be 8 or 16")
    scale, dtype = (255.0, np.uint8) if bit_depth == 8 else (65535.0, np.uint16)
    q = np.round(np.clip(image, 0.0, 1.0) * scale).astype(dtype)
    if q.ndim == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), q):
        raise DataError(f"cannot write image {path}")


def write_dataset(dataset: Dataset, out_dir, bit_depth: int = 16) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, views in (("train", dataset.train), ("test", dataset.test)):
        for v in views:
            name = f"{split}_{v.view_id:03d}.png"
            write_png(out / name, v.pixels, bit_depth)
            cam = v.camera
            entry = {
                "id": v.view_id, "file": name, "split": split,
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
                "c2w": np.asarray(cam.c2w).tolist(),
            }
            if v.mask is not None:
                entry["mask"] = f"{split}_{v.view_id:03d}_mask.png"
                write_png(out / entry["mask"], v.mask.astype(np.float64), 8)
            entries.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "near": dataset.near,
        "far": dataset.far,
        "bounds": np.asarray(dataset.bounds).tolist(),
        "background": np.asarray(dataset.background).tolist(),
        "meta": dataset.meta,
        "views": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path) -> Dataset:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"no manifest.json in {root}")
    try:
        manifest = json.loads(mpath.read_text())
        train, test = [], []
        for e in manifest["views"]:
            pixels = read_png(root / e["file"])
            if pixels.ndim == 2:
                pixels = np.repeat(pixels[..., None], 3, axis=-1)
            h, w = pixels.shape[:2]
            cam = Camera(e["fx"], e["fy"], e["cx"], e["cy"], w, h, np.array(e["c2w"], dtype=np.float64))
            mask = read_png(root / e["mask"]) > 0.5 if e.get("mask") else None
            view = PosedImage(pixels, cam, int(e["id"]), mask)
            {"train": train, "test": test}[e["split"]].append(view)
        return Dataset(
            train, test, float(manifest["near"]), float(manifest["far"]),
            np.array(manifest.get("bounds", [[-1.5] * 3, [1.5] * 3]), dtype=np.float64),
            np.array(manifest.get("background", [0.0, 0.0, 0.0]), dtype=np.float64),
            manifest.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {mpath}: {exc}") from exc


# ------------------------------------------------------------------ batches


@dataclass
class RayBatch:
    rays: Rays
    raw: np.ndarray  # (B, 3)
    blurred: np.ndarray  # (B, 3)
    high_freq: np.ndarray  # (B,) bool


class RayBank:
    """Every training pixel's ray with raw and blurred colours and frequency flag.

    Built once at startup; ``set_blur`` swaps the blurred targets (used by the
    decaying-blur ablation).
    """

    def __init__(self, views: list[PosedImage], near: float, far: float, blur_size: int = 3,
                 blur_sigma: float = 0.8, edge_threshold: float = 0.1):
        if not views:
            raise DataError("need at least one training view")
        self.views = views
        parts = [generate_rays(v.camera, view_id=v.view_id, near=near, far=far) for v in views]
        self.rays = Rays(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in ("origins", "directions", "near", "far", "pixels")))
        self.raw = np.concatenate([v.pixels.reshape(-1, 3) for v in views])
        self.high_freq = np.concatenate([classify_frequency(v.pixels, edge_threshold).ravel() for v in views])
        self.blur_size = blur_size
        self.set_blur(blur_sigma)

    def set_blur(self, sigma: float) -> None:
        self.blur_sigma = sigma
        self.blurred = np.concatenate(
            [gaussian_blur(v.pixels, self.blur_size, sigma).reshape(-1, 3) for v in self.views]
        )

    def __len__(self) -> int:
        return len(self.raw)

    def take(self, idx) -> RayBatch:
        return RayBatch(self.rays[idx], self.raw[idx], self.blurred[idx], self.high_freq[idx])


def sample_ray_batch(bank: RayBank, batch_size: int, rng: np.random.Generator,
                     replace: bool = True) -> RayBatch:
    """Uniform pixel draw over all training views."""
    if not replace and batch_size > len(bank):
        raise ConfigError(f"cannot draw {batch_size} distinct rays from {len(bank)}")
    idx = rng.choice(len(bank), size=batch_size, replace=replace) if not replace \
        else rng.integers(0, len(bank), size=batch_size)
    return bank.take(idx)
