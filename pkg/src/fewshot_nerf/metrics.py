"""Image quality metrics: PSNR, SSIM, frequency-split PSNR and an LPIPS-free
aggregate (geometric mean of the MSE and sqrt(1 - SSIM) factors)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .supervision import luminance


def mse(a, b, mask=None) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"image shapes differ: {a.shape} vs {b.shape}")
    err = (a - b) ** 2
    if mask is not None:
        err = err[np.asarray(mask, dtype=bool)]
    if err.size == 0:
        return math.nan
    return float(err.mean())


def psnr_from_mse(m: float) -> float:
    if m == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def psnr(a, b, mask=None) -> float:
    """10 log10(1 / MSE) in dB; +inf for identical images."""
    return psnr_from_mse(mse(a, b, mask))


def _window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def ssim(a, b, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM on luminance, averaged over every full window."""
    a, b = luminance(a), luminance(b)
    if a.shape != b.shape:
        raise ConfigError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < win_size:
        raise ConfigError(f"SSIM needs images of at least {win_size}x{win_size}, got {a.shape}")
    w = _window(win_size, sigma)
    c1, c2 = k1**2, k2**2

    def filt(x):
        y = ndimage.correlate1d(x, w, axis=0, mode="constant")
        y = ndimage.correlate1d(y, w, axis=1, mode="constant")
        r = win_size // 2
        return y[r:y.shape[0] - r, r:y.shape[1] - r]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def frequency_split_psnr(a, b, high_freq) -> tuple[float | None, float | None]:
    """(low, high) PSNR restricted to each side of the edge mask; None if a side is empty."""
    high = np.asarray(high_freq, dtype=bool)
    low_side = None if (~high).sum() == 0 else psnr_from_mse(mse(a, b, ~high))
    high_side = None if high.sum() == 0 else psnr_from_mse(mse(a, b, high))
    return low_side, high_side


def aggregate(psnr_db: float, ssim_val: float) -> float:
    """Geometric mean of 10^(-PSNR/10) and sqrt(1 - SSIM); not comparable to
    scores that also fold in LPIPS."""
    m = 0.0 if math.isinf(psnr_db) else 10 ** (-psnr_db / 10)
    return math.sqrt(m * math.sqrt(max(1.0 - ssim_val, 0.0)))


@dataclass
class ViewReport:
    view_id: int
    psnr: float
    ssim: float
    psnr_low: float | None
    psnr_high: float | None


@dataclass
class EvalReport:
    views: list[ViewReport] = field(default_factory=list)

    @property
    def psnr(self) -> float:
        # mean over views of per-view PSNR
        return float(np.mean([v.psnr for v in self.views]))

    @property
    def ssim(self) -> float:
        return float(np.mean([v.ssim for v in self.views]))

    @property
    def psnr_low(self) -> float | None:
        vals = [v.psnr_low for v in self.views if v.psnr_low is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def psnr_high(self) -> float | None:
        vals = [v.psnr_high for v in self.views if v.psnr_high is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def aggregate(self) -> float:
        return aggregate(self.psnr, self.ssim)

    def to_dict(self) -> dict:
        return {
            "mean": {"psnr": self.psnr, "ssim": self.ssim, "psnr_low": self.psnr_low,
                     "psnr_high": self.psnr_high, "aggregate": self.aggregate},
            "views": [asdict(v) for v in self.views],
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def table(self) -> str:
        def f(x, spec=".2f"):
            return "-" if x is None else format(x, spec)

        lines = [f"{'view':>5} {'PSNR':>7} {'SSIM':>6} {'PSNR-low':>9} {'PSNR-high':>9}"]
        for v in self.views:
            lines.append(f"{v.view_id:>5} {f(v.psnr):>7} {f(v.ssim, '.3f'):>6} {f(v.psnr_low):>9} {f(v.psnr_high):>9}")
        lines.append(f"{'mean':>5} {f(self.psnr):>7} {f(self.ssim, '.3f'):>6} {f(self.psnr_low):>9} "
                     f"{f(self.psnr_high):>9}   aggregate {self.aggregate:.4f}")
        return "\n".join(lines)


def evaluate_images(preds, gts, view_ids, edge_threshold: float = 0.1, masks=None) -> EvalReport:
    from .supervision import classify_frequency

    report = EvalReport()
    for i, (p, g, vid) in enumerate(zip(preds, gts, view_ids)):
        m = None if masks is None else masks[i]
        if m is not None:
            # background removal: compare only object pixels
            p = np.where(m[..., None], p, 0.0)
            g = np.where(m[..., None], g, 0.0)
        high = classify_frequency(g, edge_threshold)
        lo, hi = frequency_split_psnr(p, g, high)
        report.views.append(ViewReport(int(vid), psnr(p, g), ssim(p, g), lo, hi))
    return report
