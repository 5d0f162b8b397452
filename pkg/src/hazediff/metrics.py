"""Full-reference image quality: PSNR, SSIM and mean CIEDE2000 colour difference."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .imaging import as_image

PSNR_CAP = 99.0

# SSIM constants for dynamic range 1
_K1, _K2 = 0.01, 0.03
_WIN, _WIN_SIGMA = 11, 1.5

# D65 reference white, XYZ scaled so Y = 1
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    ciede: float

    def as_dict(self) -> dict:
        return asdict(self)


def _pair(a, b):
    a, b = as_image(a).astype(np.float64), as_image(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def luma(x: np.ndarray) -> np.ndarray:
    x = as_image(x).astype(np.float64)
    if x.shape[2] == 1:
        return x[:, :, 0]
    if x.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {x.shape[2]}")
    return 0.299 * x[:, :, 0] + 0.587 * x[:, :, 1] + 0.114 * x[:, :, 2]


def _gauss_window() -> np.ndarray:
    ax = np.arange(_WIN) - (_WIN - 1) / 2
    g = np.exp(-(ax**2) / (2 * _WIN_SIGMA**2))
    g /= g.sum()
    return g


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' Gaussian filtering
    k = len(g)
    h, w = x.shape
    rows = sum(g[i] * x[i : h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j : w - k + 1 + j] for j in range(k))


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _pair(a, b)
    x, y = luma(a), luma(b)
    if min(x.shape) < _WIN:
        raise ValueError(f"images smaller than the {_WIN}x{_WIN} SSIM window")
    g = _gauss_window()
    c1, c2 = _K1**2, _K2**2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM on luma, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, L=1."""
    return float(np.mean(ssim_map(a, b)))


# ------------------------------------------------------------------ colour


def srgb_to_linear(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB in [0,1] (..., 3) to CIELAB under D65."""
    lin = srgb_to_linear(np.clip(rgb, 0.0, 1.0))
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE_D65
    eps, kappa = 216 / 24389, 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def ciede2000(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """Vectorised CIEDE2000 with kL = kC = kH = 1; inputs shaped (..., 3)."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = (np.hypot(a1, b1) + np.hypot(a2, b2)) / 2
    c7 = c_bar**7
    G = 0.5 * (1 - np.sqrt(c7 / (c7 + 25.0**7)))
    a1p, a2p = (1 + G) * a1, (1 + G) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360
    # hue is undefined for achromatic colours
    h1p = np.where(c1p == 0, 0.0, h1p)
    h2p = np.where(c2p == 0, 0.0, h2p)

    dLp = L2 - L1
    dCp = c2p - c1p
    dh = h2p - h1p
    dh = np.where(dh > 180, dh - 360, np.where(dh < -180, dh + 360, dh))
    chroma_zero = (c1p * c2p) == 0
    dh = np.where(chroma_zero, 0.0, dh)
    dHp = 2 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2)

    Lp_bar = (L1 + L2) / 2
    Cp_bar = (c1p + c2p) / 2
    hsum = h1p + h2p
    hp_bar = np.where(
        chroma_zero,
        hsum,
        np.where(
            np.abs(h1p - h2p) <= 180,
            hsum / 2,
            np.where(hsum < 360, (hsum + 360) / 2, (hsum - 360) / 2),
        ),
    )
    T = (
        1
        - 0.17 * np.cos(np.radians(hp_bar - 30))
        + 0.24 * np.cos(np.radians(2 * hp_bar))
        + 0.32 * np.cos(np.radians(3 * hp_bar + 6))
        - 0.20 * np.cos(np.radians(4 * hp_bar - 63))
    )
    d_theta = 30 * np.exp(-(((hp_bar - 275) / 25) ** 2))
    cp7 = Cp_bar**7
    Rc = 2 * np.sqrt(cp7 / (cp7 + 25.0**7))
    Sl = 1 + 0.015 * (Lp_bar - 50) ** 2 / np.sqrt(20 + (Lp_bar - 50) ** 2)
    Sc = 1 + 0.045 * Cp_bar
    Sh = 1 + 0.015 * Cp_bar * T
    Rt = -np.sin(np.radians(2 * d_theta)) * Rc

    tl, tc, th = dLp / Sl, dCp / Sc, dHp / Sh
    return np.sqrt(tl**2 + tc**2 + th**2 + Rt * tc * th)


def ciede2000_pair(lab1, lab2) -> float:
    return float(ciede2000(np.asarray(lab1), np.asarray(lab2)))


def ciede_image(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-pixel CIEDE2000 between two sRGB images."""
    a, b = _pair(a, b)
    if a.shape[2] != 3:
        raise ValueError("CIEDE2000 needs RGB images")
    return float(np.mean(ciede2000(rgb_to_lab(a), rgb_to_lab(b))))


def evaluate(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(psnr=psnr(a, b), ssim=ssim(a, b), ciede=ciede_image(a, b))
