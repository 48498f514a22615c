"""Sinusoidal positional encoding and the coarse-to-fine frequency mask.

Feature layout for ``n_bands`` bands of a 3-vector ``a``::

    [a_x, a_y, a_z,
     sin(2^0 pi a) (3), cos(2^0 pi a) (3),
     ...
     sin(2^(K-1) pi a) (3), cos(2^(K-1) pi a) (3)]

The mask works on groups: three raw groups (one per raw component) followed by
one group per band, whose six sin/cos entries share a single mask bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingConfig:
    k_pos: int = 8
    k_dir: int = 4
    include_raw: bool = True

    def __post_init__(self):
        if self.k_pos < 1 or self.k_dir < 0:
            raise ConfigError(f"need k_pos >= 1 and k_dir >= 0, got {self.k_pos}, {self.k_dir}")

    @property
    def pos_dim(self) -> int:
        return encoded_dim(self.k_pos, self.include_raw)

    @property
    def dir_dim(self) -> int:
        return encoded_dim(self.k_dir, self.include_raw)


def encoded_dim(n_bands: int, include_raw: bool = True) -> int:
    return 3 * include_raw + 6 * n_bands


def encode(a, n_bands: int, include_raw: bool = True) -> np.ndarray:
    """Encode ``a`` of shape (..., 3) into (..., 3 + 6 * n_bands) features."""
    a = np.asarray(a, dtype=np.result_type(a, np.float32))
    if a.shape[-1] != 3:
        raise EncodingError(f"expected trailing dimension 3, got shape {a.shape}")
    bad = ~np.isfinite(a)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise EncodingError(f"non-finite input component at index {idx}: {a[idx]}")
    lead = a.shape[:-1]
    freqs = (2.0 ** np.arange(n_bands) * math.pi).astype(a.dtype)
    arg = a[..., None, :] * freqs[:, None]  # (..., K, 3)
    bands = np.stack([np.sin(arg), np.cos(arg)], axis=-2).reshape(lead + (6 * n_bands,))
    if not include_raw:
        return bands
    return np.concatenate([a, bands], axis=-1)


@dataclass(frozen=True)
class FrequencyMask:
    """Mask over ``n_bands + 3`` groups (raw components first) at iteration ``t``."""

    bits: np.ndarray
    t: float
    horizon: int
    n_bands: int

    @property
    def band_bits(self) -> np.ndarray:
        return self.bits[3:]

    @property
    def unlocked_fraction(self) -> float:
        """Share of frequency bands switched on, counting partial bits."""
        return float(self.band_bits.sum() / self.n_bands) if self.n_bands else 1.0

    def channel_weights(self, include_raw: bool = True) -> np.ndarray:
        """Per-channel multipliers matching :func:`encode`'s layout."""
        raw = self.bits[:3] if include_raw else np.zeros(0)
        return np.concatenate([raw, np.repeat(self.band_bits, 6)])


def _progress(t: float, horizon: int, n_bands: int) -> Fraction:
    """t L / T as an exact rational, so the window edges land exactly on integers."""
    if horizon < 1 or n_bands < 0 or t < 0:
        raise ConfigError(f"mask needs t >= 0, T >= 1, L >= 0; got t={t}, T={horizon}, L={n_bands}")
    return Fraction(t) * n_bands / horizon


def mask_at(t: float, horizon: int, n_bands: int, schedule: str = "closed_form") -> FrequencyMask:
    """Frequency mask at iteration ``t`` for a schedule of ``horizon`` iterations.

    ``closed_form`` evaluates, with x = t L / T and 1-based group index i,
    1 for i <= x + 3, x - floor(x) for x + 3 < i <= x + 6, 0 beyond.  That
    expression is not monotone in t when x crosses an integer (the fractional
    window drops back to 0), so training uses ``monotone``: groups up to
    floor(x) + 3 are on and only group floor(x) + 4 carries the fraction.
    Both clamp to all-ones once t >= T.
    """
    x = _progress(t, horizon, n_bands)
    n = n_bands + 3
    if t >= horizon:
        return FrequencyMask(np.ones(n), t, horizon, n_bands)
    i = np.arange(1, n + 1)
    frac = float(x - math.floor(x))
    if schedule == "closed_form":
        # i <= x + k  <=>  i <= floor(x) + k for integer i
        bits = np.where(i <= math.floor(x) + 3, 1.0, np.where(i <= math.floor(x) + 6, frac, 0.0))
    elif schedule == "monotone":
        full = math.floor(x) + 3
        bits = np.where(i <= full, 1.0, np.where(i == full + 1, frac, 0.0))
    else:
        raise ConfigError(f"unknown mask schedule {schedule!r}")
    return FrequencyMask(bits, t, horizon, n_bands)


def masked_encode(a, n_bands: int, mask: FrequencyMask, include_raw: bool = True) -> np.ndarray:
    """``encode(a) * mask`` with each band's six entries sharing one bit."""
    if mask.bits.shape != (n_bands + 3,):
        raise ConfigError(f"mask has {mask.bits.size} groups, encoding needs {n_bands + 3}")
    feats = encode(a, n_bands, include_raw)
    return feats * mask.channel_weights(include_raw).astype(feats.dtype)
