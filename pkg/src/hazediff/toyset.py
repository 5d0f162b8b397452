"""Procedural clean/depth scenes for desk-scale experiments.

Scenes mix a power-law (1/f) colour texture with a few hard-edged shapes so
the clean images have a natural-looking falling spectrum plus real edges.
Depth grows towards the top of the frame, with shapes sitting on their own
depth planes.
"""

from __future__ import annotations

import numpy as np

from .haze_aug import SyntheticPair
from .haze_synth import AsmParams, normalize_depth, synthesize_haze
from .imaging import DTYPE, make_rng

# base synthesis ranges (the moderate-haze setting HazeAug widens)
BASE_A = (0.7, 1.0)
BASE_BETA = (0.6, 1.8)


def _power_law_field(rng: np.random.Generator, size: int, slope: float = 2.0) -> np.ndarray:
    fu = np.fft.fftfreq(size)
    r = np.hypot(fu[:, None], fu[None, :])
    r[0, 0] = 1.0
    amp = r ** (-slope / 2)
    amp[0, 0] = 0.0
    phase = rng.uniform(0, 2 * np.pi, size=(size, size))
    f = np.real(np.fft.ifft2(amp * np.exp(1j * phase)))
    f -= f.min()
    return f / max(f.max(), 1e-12)


def make_scene(rng: np.random.Generator, size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """One clean RGB image in [0,1] and its relative depth map (max 1)."""
    tint = rng.uniform(0.4, 1.0, size=3)
    tex = np.stack([_power_law_field(rng, size) for _ in range(3)], axis=-1)
    img = 0.15 + 0.7 * (0.6 * tex + 0.4 * tex.mean(axis=-1, keepdims=True)) * tint
    rows = np.arange(size)[:, None] / (size - 1)
    depth = np.broadcast_to(0.3 + 0.7 * (1 - rows), (size, size)).copy()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(2, 5))):
        colour = rng.uniform(0.05, 0.95, size=3)
        if rng.uniform() < 0.5:
            y0, x0 = rng.integers(0, size - 8, size=2)
            hh, ww = rng.integers(6, size // 2, size=2)
            m = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
        else:
            cy, cx = rng.uniform(0, size, size=2)
            rad = rng.uniform(4, size / 4)
            m = (yy - cy) ** 2 + (xx - cx) ** 2 < rad**2
        img[m] = 0.8 * colour + 0.2 * img[m]
        depth[m] = rng.uniform(0.2, 0.9)
    return np.clip(img, 0, 1).astype(DTYPE), normalize_depth(depth)


def make_toyset(n: int = 10, size: int = 64, seed: int = 0) -> list[SyntheticPair]:
    """``n`` synthetic (hazy, clean, depth) triples hazed with the base ASM ranges."""
    rng = make_rng(seed)
    pairs = []
    for i in range(n):
        clean, depth = make_scene(rng, size)
        p = AsmParams(float(rng.uniform(*BASE_A)), float(rng.uniform(*BASE_BETA)))
        pairs.append(SyntheticPair(hazy=synthesize_haze(clean, depth, p), clean=clean, depth=depth, name=f"scene{i:03d}"))
    return pairs
