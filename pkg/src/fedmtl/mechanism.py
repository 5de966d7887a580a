"""Client-side Gaussian mechanism: clipping, sensitivity, perturbation, calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import RngStream


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float = 1.0
    sigma: float = 0.0
    # overrides the 2CK/M formula when set
    sensitivity: float | None = None

    def __post_init__(self) -> None:
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.sensitivity is not None and not self.sensitivity >= 0:
            raise ValueError("sensitivity override must be >= 0")

    def resolved_sensitivity(self, k: int, m: int) -> float:
        if self.sensitivity is not None:
            return self.sensitivity
        return sensitivity(self.clip_norm, k, m)


def clip(g: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``g`` so its l2 norm is at most ``clip_norm``."""
    if not clip_norm > 0:
        raise ValueError("clip_norm must be > 0")
    g = np.asarray(g, dtype=np.float64)
    if math.isinf(clip_norm):
        return g.copy()
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm:
        return g.copy()
    return g * (clip_norm / norm)


def sensitivity(clip_norm: float, k: int, m: int) -> float:
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= K <= M, got K={k}, M={m}")
    return 2.0 * clip_norm * k / m


def perturb(g: np.ndarray, sens: float, sigma: float, rng: RngStream) -> np.ndarray:
    """g + N(0, (sigma*sens)^2 I), drawn from the stream at ``rng``'s path."""
    g = np.asarray(g, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        # also avoids 0 * inf when clipping is disabled
        return g.copy()
    return add_noise(g, sens, sigma, rng.normal(g.shape))


def add_noise(g: np.ndarray, sens: float, sigma: float, z: np.ndarray) -> np.ndarray:
    """g + sigma * sens * z for pre-drawn standard normals ``z``."""
    if sigma == 0:
        return np.array(g, dtype=np.float64)
    return g + (sigma * sens) * z


def sigma_from_epsilon(epsilon: float, delta: float) -> float:
    """Classical Gaussian-mechanism calibration sqrt(2 ln(1.25/delta)) / epsilon."""
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon
