"""Power spectra, radially averaged PSD curves and the KL distance between them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

KL_EPS = 1e-12


@dataclass(frozen=True)
class RadialPSD:
    freq: np.ndarray  # bin centres, cycles/pixel; freq[0] == 0 is the DC bin
    power: np.ndarray  # float64, mean power per annulus
    counts: np.ndarray  # spectrum samples per annulus

    @property
    def bins(self) -> int:
        return len(self.power)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frequency", "power"])
        for f, p in zip(self.freq, self.power):
            w.writerow([repr(float(f)), repr(float(p))])
        return buf.getvalue()


def power_spectrum_2d(x: np.ndarray) -> np.ndarray:
    """Centred ``|F(x)|^2 / (H W)`` of a single-channel image, float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        if x.shape[2] != 1:
            raise ValueError("power_spectrum_2d takes one channel; use mean_power_spectrum for colour")
        x = x[:, :, 0]
    h, w = x.shape
    f = np.fft.fft2(x)
    return np.fft.fftshift((f.real**2 + f.imag**2) / (h * w))


def mean_power_spectrum(x: np.ndarray) -> np.ndarray:
    """Per-channel power spectra averaged over channels."""
    x = np.asarray(x)
    if x.ndim == 2:
        return power_spectrum_2d(x)
    return np.mean([power_spectrum_2d(x[:, :, c]) for c in range(x.shape[2])], axis=0)


def default_bins(h: int, w: int) -> int:
    return min(h, w) // 2


def _bin_edges(bins: int) -> tuple[np.ndarray, np.ndarray]:
    width = 0.5 / (bins - 1)
    centres = np.concatenate([[0.0], (np.arange(1, bins) - 0.5) * width])
    return centres, width


def _radial_index(h: int, w: int, bins: int) -> np.ndarray:
    fu = np.fft.fftshift(np.fft.fftfreq(h))
    fv = np.fft.fftshift(np.fft.fftfreq(w))
    r = np.hypot(fu[:, None], fv[None, :])
    _, width = _bin_edges(bins)
    idx = np.ceil(r / width - 1e-9).astype(int)  # annulus j covers ((j-1) w, j w]
    idx[r == 0] = 0
    idx[idx >= bins] = -1  # corners beyond 0.5 cycles/pixel are dropped
    return idx


def radial_psd_from_spectrum(spec: np.ndarray, bins: int | None = None) -> RadialPSD:
    h, w = spec.shape
    if bins is None:
        bins = default_bins(h, w)
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if bins > default_bins(h, w):
        raise ValueError(f"{bins} bins exceed floor(min(H, W)/2) = {default_bins(h, w)}")
    idx = _radial_index(h, w, bins)
    keep = idx >= 0
    sums = np.bincount(idx[keep], weights=spec[keep], minlength=bins)
    counts = np.bincount(idx[keep], minlength=bins)
    power = np.divide(sums, counts, out=np.zeros(bins), where=counts > 0)
    freq, _ = _bin_edges(bins)
    return RadialPSD(freq=freq, power=power, counts=counts)


def radial_psd(x: np.ndarray, bins: int | None = None) -> RadialPSD:
    """Radially averaged PSD with equal-width annuli; the DC bin stands alone.

    Colour inputs are reduced by averaging per-channel spectra.
    """
    return radial_psd_from_spectrum(mean_power_spectrum(x), bins)


def average_psd(curves: list[RadialPSD]) -> RadialPSD:
    if not curves:
        raise ValueError("no curves to average")
    power = np.mean([c.power for c in curves], axis=0)
    return RadialPSD(freq=curves[0].freq, power=power, counts=curves[0].counts)


def flat_reference(bins: int) -> RadialPSD:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    freq, _ = _bin_edges(bins)
    return RadialPSD(freq=freq, power=np.full(bins, 1.0 / bins), counts=np.ones(bins, dtype=int))


def _normalized(power: np.ndarray) -> np.ndarray:
    p = np.asarray(power, dtype=np.float64)[1:]
    total = p.sum()
    p = p / total if total > 0 else np.full_like(p, 1.0 / len(p))
    return p + KL_EPS


def psd_kl(p: RadialPSD, q: RadialPSD) -> float:
    """KL(p || q) between PSD curves normalized to unit mass over the non-DC bins."""
    if p.bins != q.bins:
        raise ValueError(f"bin counts differ: {p.bins} vs {q.bins}")
    a, b = _normalized(p.power), _normalized(q.power)
    return max(float(np.sum(a * np.log(a / b))), 0.0)


def kl_to_flat(curve: RadialPSD) -> float:
    return psd_kl(curve, flat_reference(curve.bins))
