"""Homogeneous atmospheric scattering: I = J t + A (1 - t), t = exp(-beta d)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import DTYPE, as_image


@dataclass(frozen=True)
class AsmParams:
    A: float
    beta: float

    def __post_init__(self):
        if not self.A > 0:
            raise ValueError(f"atmospheric light must be positive, got {self.A}")
        if self.beta < 0:
            raise ValueError(f"scattering coefficient must be >= 0, got {self.beta}")


def normalize_depth(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d)
    peak = float(np.max(d)) if d.size else 0.0
    if not peak > 0:
        raise ValueError("cannot normalize an all-zero depth map")
    return (d / peak).astype(DTYPE)


def transmission(d: np.ndarray, beta: float) -> np.ndarray:
    """Per-pixel transmission ``exp(-beta d)`` shaped (H, W, 1)."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    d = np.asarray(d, dtype=DTYPE)
    t = np.exp(-DTYPE(beta) * d)
    return t[:, :, None] if t.ndim == 2 else t


def synthesize_haze(J: np.ndarray, d: np.ndarray, p: AsmParams) -> np.ndarray:
    """Apply the scattering model with a scalar A shared across channels.

    The result is not clamped: A may exceed 1 for hard samples.
    """
    J = as_image(J)
    if J.shape[2] not in (1, 3):
        raise ValueError(f"clean image must have 1 or 3 channels, got {J.shape[2]}")
    d = np.asarray(d)
    if d.shape[:2] != J.shape[:2]:
        raise ValueError(f"depth {d.shape[:2]} does not match image {J.shape[:2]}")
    if p.beta == 0:
        return J.copy()
    t = transmission(d, p.beta)
    return (J * t + DTYPE(p.A) * (DTYPE(1) - t)).astype(DTYPE)
