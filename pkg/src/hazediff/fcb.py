"""Frequency compensation block: a frozen Gaussian bank mixed by trainable weights.

The bank blurs the input with M normalized Gaussians ``b_j = G_j * s`` and forms
the branch set ``[s, s - b_1, b_1 - b_2, ..., b_{M-1} - b_M]``. Every branch but
the first is a difference of Gaussians, so it has zero DC gain and acts as a
band- or high-pass filter. The block output is the weighted sum of branches.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .imaging import conv2d_separable, conv2d_separable_adjoint

DEFAULT_KS = (3, 5, 7)
DEFAULT_SIGMAS = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class GaussianSpec:
    k: int
    sigma: float

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel size must be odd and >= 1, got {self.k}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def gaussian_taps(spec: GaussianSpec) -> np.ndarray:
    """1-D factor of :func:`gaussian_kernel`, normalized to sum 1."""
    ax = np.arange(spec.k) - (spec.k - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * spec.sigma**2))
    return g / g.sum()


def gaussian_kernel(spec: GaussianSpec) -> np.ndarray:
    """Sampled isotropic Gaussian on a k x k grid, normalized to sum 1 (float64).

    Built as the outer product of normalized 1-D taps, which makes it exactly
    symmetric under flips and transposition.
    """
    g = gaussian_taps(spec)
    return np.outer(g, g)


@dataclass
class FilterBank:
    specs: tuple[GaussianSpec, ...]
    gamma_sigma: float = 1.0
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    kernels: tuple[np.ndarray, ...] = field(init=False, repr=False)
    taps: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.specs:
            raise ValueError("a filter bank needs at least one Gaussian")
        if not self.gamma_sigma > 0:
            raise ValueError(f"gamma_sigma must be positive, got {self.gamma_sigma}")
        # branches go from finest to coarsest blur; ties in sigma broken by size
        self.specs = tuple(sorted(self.specs, key=lambda s: (s.sigma, s.k)))
        scaled = [GaussianSpec(s.k, s.sigma * self.gamma_sigma) for s in self.specs]
        self.taps = tuple(gaussian_taps(s) for s in scaled)
        self.kernels = tuple(np.outer(t, t) for t in self.taps)
        if self.weights is None:
            self.weights = np.ones(len(self.specs) + 1, dtype=np.float32)
        self.weights = np.asarray(self.weights, dtype=np.float32).copy()
        if self.weights.shape != (len(self.specs) + 1,):
            raise ValueError(f"expected {len(self.specs) + 1} weights, got {self.weights.shape}")

    @property
    def n_branches(self) -> int:
        return len(self.specs) + 1

    def branch_names(self) -> list[str]:
        names = ["s"]
        prev = "s"
        for spec in self.specs:
            cur = f"s{spec.k}"
            names.append(f"{prev}-{cur}")
            prev = cur
        return names


def make_bank(
    ks: Sequence[int] = DEFAULT_KS,
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
    gamma_sigma: float = 1.0,
    weights: Iterable[float] | None = None,
) -> FilterBank:
    if len(ks) != len(sigmas):
        raise ValueError("ks and sigmas must have equal length")
    specs = tuple(GaussianSpec(int(k), float(s)) for k, s in zip(ks, sigmas))
    w = None if weights is None else np.asarray(list(weights), dtype=np.float32)
    return FilterBank(specs, gamma_sigma=gamma_sigma, weights=w)


def scale_bank(bank: FilterBank, gamma_sigma: float) -> FilterBank:
    """Rebuild ``bank`` with every sigma multiplied by ``gamma_sigma``.

    The scale is absolute with respect to the bank's base sigmas, and the
    current weights are carried over.
    """
    if not gamma_sigma > 0:
        raise ValueError(f"gamma_sigma must be positive, got {gamma_sigma}")
    return replace(bank, gamma_sigma=float(gamma_sigma), weights=bank.weights.copy())


@dataclass
class FcbCache:
    branches: list[np.ndarray]
    n_kernels: int


def fcb_branches(s: np.ndarray, bank: FilterBank) -> list[np.ndarray]:
    blurred = [conv2d_separable(s, t) for t in bank.taps]
    out = [s]
    prev = s
    for b in blurred:
        out.append(prev - b)
        prev = b
    return out


def fcb_forward(s: np.ndarray, bank: FilterBank) -> tuple[np.ndarray, FcbCache]:
    """Return the block output and the branch cache needed by :func:`fcb_backward`."""
    s = np.asarray(s)
    branches = fcb_branches(s, bank)
    w = bank.weights.astype(s.dtype)
    out = w[0] * branches[0]
    for wj, br in zip(w[1:], branches[1:]):
        out = out + wj * br
    return out, FcbCache(branches, len(bank.kernels))


def fcb_backward(grad_out: np.ndarray, cache: FcbCache, bank: FilterBank) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss w.r.t. the block input and the mixing weights."""
    if cache.n_kernels != len(bank.kernels) or len(cache.branches) != bank.n_branches:
        raise ValueError("cache does not belong to this filter bank")
    g = np.asarray(grad_out)
    if g.shape != cache.branches[0].shape:
        raise ValueError(f"grad shape {g.shape} != forward shape {cache.branches[0].shape}")
    grad_w = np.array([np.sum(g * br, dtype=np.float64) for br in cache.branches])

    # s_bar = (w1 + w2) s + sum_j c_j (G_j * s),  c_j = w_{j+2} - w_{j+1}, c_M = -w_{M+1}
    w = bank.weights.astype(np.float64)
    m = len(bank.kernels)
    grad_s = (w[0] + w[1]) * g
    for j, taps in enumerate(bank.taps):
        c = (w[j + 2] if j + 1 < m else 0.0) - w[j + 1]
        if c != 0.0:
            grad_s = grad_s + g.dtype.type(c) * conv2d_separable_adjoint(g, taps)
    return grad_s.astype(g.dtype, copy=False), grad_w


# ------------------------------------------------------------ frequency response


def _probe_amplitude(y: np.ndarray, cos_p: np.ndarray, sin_p: np.ndarray, f: float) -> float:
    if f == 0.0:
        return float(abs(y.mean()))
    # least-squares fit y ~ a cos + b sin via the 2x2 normal equations
    cc, ss, cs = np.vdot(cos_p, cos_p), np.vdot(sin_p, sin_p), np.vdot(cos_p, sin_p)
    yc, ys = np.vdot(cos_p, y), np.vdot(sin_p, y)
    det = cc * ss - cs * cs
    if det <= 1e-9 * cc * max(ss, 1.0):
        return float(abs(yc) / cc)  # sin component vanishes on the grid (Nyquist, axis-aligned)
    a = (ss * yc - cs * ys) / det
    b = (cc * ys - cs * yc) / det
    return float(np.hypot(a, b))


def frequency_response(
    bank: FilterBank,
    n_freq: int = 65,
    grid: int = 256,
    orientations: Sequence[float] = (0.0, 45.0, 90.0),
) -> tuple[np.ndarray, np.ndarray]:
    """Measure each branch's gain by driving it with unit-amplitude sinusoids.

    Returns ``(freqs, response)`` with ``freqs`` spanning [0, 0.5] cycles/pixel
    and ``response`` shaped ``(n_freq, n_branches)``. The gain at each frequency
    is averaged over probe orientations (degrees). The branch outputs come from
    the replicate-padded Gaussian convolutions; the amplitude is fitted on the interior
    so the border clamp does not bias the estimate.
    """
    if n_freq < 2:
        raise ValueError("n_freq must be >= 2")
    r = max(s.k for s in bank.specs) // 2
    rows, cols = np.mgrid[0:grid, 0:grid].astype(np.float64)
    inner = (slice(r, grid - r), slice(r, grid - r))
    freqs = np.linspace(0.0, 0.5, n_freq)
    resp = np.zeros((n_freq, bank.n_branches))
    for i, f in enumerate(freqs):
        for theta in np.deg2rad(np.asarray(orientations, dtype=np.float64)):
            phase = 2 * np.pi * f * (np.cos(theta) * cols + np.sin(theta) * rows)
            probe = np.cos(phase)
            branches = fcb_branches(probe, bank)
            for j, br in enumerate(branches):
                resp[i, j] += _probe_amplitude(br[inner], probe[inner], np.sin(phase)[inner], f)
    resp /= len(orientations)
    return freqs, resp


def peak_frequencies(freqs: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Frequency of maximum gain for each branch (first maximum on ties)."""
    return freqs[np.argmax(response, axis=0)]


def response_csv(freqs: np.ndarray, response: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frequency"] + [f"branch_{j}" for j in range(response.shape[1])])
    for f, row in zip(freqs, response):
        w.writerow([repr(float(f))] + [repr(float(v)) for v in row])
    return buf.getvalue()


def export_weights(model) -> list[tuple[int, np.ndarray]]:
    """``(layer index, W)`` for every FCB of ``model``.

    ``model.fcbs`` is ordered by pyramid level, deepest skip first, so layer
    index 0 is the block nearest the bottleneck.
    """
    banks = list(getattr(model, "fcbs", []))
    return [(i, np.array(b.weights, dtype=np.float64)) for i, b in enumerate(reversed(banks))]


def weights_csv(rows: Iterable[tuple[int, np.ndarray]]) -> str:
    rows = list(rows)
    width = max((len(w) for _, w in rows), default=0)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["layer"] + [f"w_{j}" for j in range(width)])
    for layer, w in rows:
        out.writerow([layer] + [repr(float(v)) for v in w])
    return buf.getvalue()
