"""Training losses.  Every batch reduction is a mean over rays.

Inputs may be Values (inside a training graph) or plain arrays; results are
always Values so they can be summed into the total and differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class LossWeights:
    lambda_u: float = 0.01
    lambda_o: float = 0.01
    lambda_r_init: float = 1e-5
    lambda_r_final: float = 1e-3
    lambda_r_ramp: int = 512
    s: float = 10.0
    phase_switch: int = 1250  # T_s
    mask_horizon: int = 4500  # T

    def __post_init__(self):
        vals = (self.lambda_u, self.lambda_o, self.lambda_r_init, self.lambda_r_final, self.s)
        if min(vals) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.lambda_r_final < self.lambda_r_init:
            raise ConfigError("lambda_r must not decrease over its ramp")

    def lambda_r(self, iter_t: int) -> float:
        """Linear ramp from ``lambda_r_init`` to ``lambda_r_final`` over ``lambda_r_ramp`` iterations."""
        if self.lambda_r_ramp <= 0:
            return self.lambda_r_final
        frac = min(max(iter_t / self.lambda_r_ramp, 0.0), 1.0)
        return self.lambda_r_init + (self.lambda_r_final - self.lambda_r_init) * frac


@dataclass
class LossBreakdown:
    l_s: ad.Value
    l_u: ad.Value | None
    l_r: ad.Value | None
    l_o: ad.Value | None
    l_total: ad.Value
    lambda_u: float
    lambda_r: float
    lambda_o: float
    mean_beta_bar2: float | None = None
    mean_weight: float | None = None

    def as_dict(self) -> dict[str, float]:
        out = {"l_s": float(self.l_s)}
        for key in ("l_u", "l_r", "l_o"):
            v = getattr(self, key)
            if v is not None:
                out[key] = float(v)
        out["l_total"] = float(self.l_total)
        return out


def two_phase_target(iter_t: int, phase_switch: int, raw, blurred):
    """Blurred supervision strictly before ``phase_switch``, raw from it onwards."""
    return blurred if iter_t < phase_switch else raw


def _sq_err(c_bar, target) -> ad.Value:
    diff = ad.const(c_bar) - ad.const(target)
    return ad.sum(diff * diff, axis=-1)


def loss_s(c_bar, target) -> ad.Value:
    """Mean over rays of the squared RGB error (summed over channels)."""
    return ad.mean(_sq_err(c_bar, target))


def loss_u(c_bar, beta_bar2, target) -> ad.Value:
    """Gaussian negative log likelihood with learned per-ray variance.

    mean( |target - c_bar|^2 / (2 beta_bar2) + log(beta_bar2) / 2 )
    """
    beta_bar2 = ad.const(beta_bar2)
    if np.any(beta_bar2.data <= 0):
        raise AssertionError(f"beta_bar2 must be positive, min is {beta_bar2.data.min()}")
    return ad.mean(_sq_err(c_bar, target) / (2.0 * beta_bar2) + 0.5 * ad.log(beta_bar2))


def loss_r(p, s: float = 10.0) -> ad.Value:
    """Mean over rays of (1/N) sum_i log(1 + s p_i)."""
    return ad.mean(ad.log(1.0 + s * ad.const(p)))


def near_window(n_samples: int, fraction: float = 0.1) -> int:
    return max(1, math.ceil(fraction * n_samples))


def loss_o(weights, m: int) -> ad.Value:
    """Mean over rays of the mean of the first ``m`` compositing weights."""
    weights = ad.const(weights)
    if not 0 < m <= weights.shape[-1]:
        raise ConfigError(f"near-camera window {m} must lie in [1, {weights.shape[-1]}]")
    return ad.mean(weights[:, :m])


def total_loss(l_s, weights: LossWeights, iter_t: int, l_u=None, l_r=None, l_o=None,
               beta_bar2=None) -> LossBreakdown:
    """Weighted sum; absent terms contribute nothing."""
    lam_r = weights.lambda_r(iter_t)
    total = ad.const(l_s)
    for term, lam in ((l_u, weights.lambda_u), (l_r, lam_r), (l_o, weights.lambda_o)):
        if term is not None:
            total = total + lam * ad.const(term)
    diag = {}
    if beta_bar2 is not None:
        b = np.asarray(ad.const(beta_bar2).data, dtype=np.float64)
        diag = {"mean_beta_bar2": float(b.mean()), "mean_weight": float((1.0 / b).mean())}
    return LossBreakdown(l_s, l_u, l_r, l_o, total, weights.lambda_u, lam_r, weights.lambda_o, **diag)


# ------------------------------------------------------------- alternatives


def alt_linear_weight_loss(c_bar, target, high_freq, h: float) -> ad.Value:
    """L_low + h * L_high, each a sum over its rays divided by the batch size."""
    err = _sq_err(c_bar, target)
    high = np.asarray(high_freq, dtype=err.dtype)
    scale = (1.0 - high) + h * high
    return ad.mean(err * scale)


def linear_weight(iter_t: int, horizon: int) -> float:
    return min(max(iter_t / horizon, 0.0), 1.0)


def alt_entropy_loss(p) -> ad.Value:
    """Mean over rays of -sum_i p_i log p_i, with 0 log 0 = 0."""
    p = ad.const(p)
    tiny = np.finfo(p.dtype).tiny
    return ad.mean(-ad.sum(p * ad.log(ad.clamp_min(p, tiny)), axis=-1))


def alt_emptiness_on_w(weights, s: float = 10.0) -> ad.Value:
    """Emptiness penalty applied to compositing weights instead of ray density."""
    return ad.mean(ad.log(1.0 + s * ad.const(weights)))
