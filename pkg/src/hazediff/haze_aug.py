"""HazeAug: widened-range ASM hard samples or Fourier low-frequency haze migration.

For each clean sample a fair coin picks one of two operators. The hard-sample
branch re-synthesizes haze with A and beta drawn from enlarged ranges. The
migration branch copies the centred low-frequency amplitude spectrum of a donor
hazy image onto the clean image while keeping the clean image's phase, then
smooths the result with a small Gaussian.

Random draws are split from their application (:func:`draw_aug` /
:func:`apply_aug`) so a recorded :class:`AugDraw` replays an augmentation
exactly without touching an RNG.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .fcb import GaussianSpec, gaussian_kernel
from .haze_synth import AsmParams, synthesize_haze
from .imaging import DTYPE, as_image, conv2d


@dataclass(frozen=True)
class HazeAugConfig:
    a_min: float = 0.5
    a_max: float = 1.8
    beta_min: float = 0.8
    beta_max: float = 2.8
    delta_min: float = 0.0
    delta_max: float = 2.1e-3
    smooth_sigma: float = 1.0
    smooth_k: int = 3

    def __post_init__(self):
        if not 0 < self.a_min <= self.a_max:
            raise ValueError(f"need 0 < a_min <= a_max, got ({self.a_min}, {self.a_max})")
        if not 0 <= self.beta_min <= self.beta_max:
            raise ValueError(f"need 0 <= beta_min <= beta_max, got ({self.beta_min}, {self.beta_max})")
        if not 0 <= self.delta_min <= self.delta_max <= 1:
            raise ValueError(f"need 0 <= delta_min <= delta_max <= 1, got ({self.delta_min}, {self.delta_max})")
        GaussianSpec(self.smooth_k, self.smooth_sigma)

    @classmethod
    def from_dict(cls, d: dict) -> "HazeAugConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown aug config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SyntheticPair:
    hazy: np.ndarray
    clean: np.ndarray
    depth: np.ndarray
    name: str = ""

    def __post_init__(self):
        if not (self.hazy.shape[:2] == self.clean.shape[:2] == self.depth.shape[:2]):
            raise ValueError(
                f"pair {self.name!r} has mismatched sizes: hazy {self.hazy.shape}, "
                f"clean {self.clean.shape}, depth {self.depth.shape}"
            )


def low_freq_mask(h: int, w: int, delta: float) -> np.ndarray:
    """Square window around the DC bin of an ``fftshift``-centred spectrum.

    Bins with ``|u - h//2| <= round(delta h)`` and ``|v - w//2| <= round(delta w)``
    are 1. ``delta == 0`` gives an empty mask; any ``delta > 0`` includes at
    least the DC bin.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    mask = np.zeros((h, w), dtype=DTYPE)
    if delta == 0.0:
        return mask
    rh, rw = int(round(delta * h)), int(round(delta * w))
    cu, cv = h // 2, w // 2
    mask[max(cu - rh, 0) : cu + rh + 1, max(cv - rw, 0) : cv + rw + 1] = 1.0
    return mask


def migrate_spectrum(src: np.ndarray, dst_clean: np.ndarray, delta: float) -> np.ndarray:
    """Low-frequency amplitude swap without smoothing or clamping (float64 result)."""
    src, dst = as_image(src), as_image(dst_clean)
    if src.shape != dst.shape:
        raise ValueError(f"source {src.shape} and destination {dst.shape} differ in shape")
    h, w, _ = dst.shape
    mask = low_freq_mask(h, w, delta).astype(np.float64)[:, :, None]
    fs = np.fft.fftshift(np.fft.fft2(src.astype(np.float64), axes=(0, 1)), axes=(0, 1))
    fd = np.fft.fftshift(np.fft.fft2(dst.astype(np.float64), axes=(0, 1)), axes=(0, 1))
    amp = mask * np.abs(fs) + (1.0 - mask) * np.abs(fd)
    mixed = amp * np.exp(1j * np.angle(fd))
    out = np.fft.ifft2(np.fft.ifftshift(mixed, axes=(0, 1)), axes=(0, 1))
    return out.real


def haze_migration(src: np.ndarray, dst_clean: np.ndarray, delta: float, cfg: HazeAugConfig) -> np.ndarray:
    """Move the haze pattern of ``src`` onto ``dst_clean``; smoothed and clamped to [0,1]."""
    mixed = migrate_spectrum(src, dst_clean, delta).astype(DTYPE)
    kern = gaussian_kernel(GaussianSpec(cfg.smooth_k, cfg.smooth_sigma))
    return np.clip(conv2d(mixed, kern), 0.0, 1.0).astype(DTYPE)


@dataclass(frozen=True)
class AugDraw:
    """Everything needed to replay one HazeAug call."""

    branch: str  # "hard" or "migrate"
    A: float | None = None
    beta: float | None = None
    delta: float | None = None
    donor: int | None = None

    def as_row(self) -> dict:
        return asdict(self)


def draw_hard(rng: np.random.Generator, cfg: HazeAugConfig) -> AsmParams:
    A = float(rng.uniform(cfg.a_min, cfg.a_max))
    beta = float(rng.uniform(cfg.beta_min, cfg.beta_max))
    return AsmParams(A, beta)


def hard_sample(clean: np.ndarray, depth: np.ndarray, rng: np.random.Generator, cfg: HazeAugConfig) -> np.ndarray:
    return synthesize_haze(clean, depth, draw_hard(rng, cfg))


def draw_aug(n_samples: int, rng: np.random.Generator, cfg: HazeAugConfig) -> AugDraw:
    if n_samples < 1:
        raise ValueError("HazeAug needs a non-empty dataset")
    coin = rng.uniform(0.0, 1.0)
    if coin < 0.5:
        p = draw_hard(rng, cfg)
        return AugDraw("hard", A=p.A, beta=p.beta)
    delta = float(rng.uniform(cfg.delta_min, cfg.delta_max))
    donor = int(rng.integers(n_samples))
    return AugDraw("migrate", delta=delta, donor=donor)


def apply_aug(draw: AugDraw, index: int, dataset: Sequence[SyntheticPair], cfg: HazeAugConfig) -> np.ndarray:
    sample = dataset[index]
    if draw.branch == "hard":
        return synthesize_haze(sample.clean, sample.depth, AsmParams(draw.A, draw.beta))
    if draw.branch == "migrate":
        return haze_migration(dataset[draw.donor].hazy, sample.clean, draw.delta, cfg)
    raise ValueError(f"unknown HazeAug branch {draw.branch!r}")


def haze_aug(
    sample_index: int,
    dataset: Sequence[SyntheticPair],
    rng: np.random.Generator,
    cfg: HazeAugConfig,
) -> np.ndarray:
    if len(dataset) == 0:
        raise ValueError("HazeAug needs a non-empty dataset")
    if not 0 <= sample_index < len(dataset):
        raise IndexError(f"sample index {sample_index} out of range for {len(dataset)} samples")
    return apply_aug(draw_aug(len(dataset), rng, cfg), sample_index, dataset, cfg)
