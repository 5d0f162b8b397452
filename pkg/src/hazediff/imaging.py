"""Image tensors, seeded RNG, file I/O and the depthwise convolution primitive.

Images are plain ``numpy`` arrays shaped ``(H, W, C)`` in ``float32``; depth
maps are ``(H, W)``. Nothing here wraps them in a class, callers validate with
:func:`check_image` when a contract needs it.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

DTYPE = np.float32


class ImageIOError(ValueError):
    """Raised for missing, malformed or unsupported image/depth files."""


def check_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"{name} must be shaped (H, W, C), got {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"{name} has an empty dimension: {x.shape}")
    return x


def as_image(x: np.ndarray) -> np.ndarray:
    """Promote ``(H, W)`` to ``(H, W, 1)``; leave ``(H, W, C)`` alone."""
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, :, None]
    return check_image(x)


def make_rng(seed: int | None = 0) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(master: int, *keys: int) -> int:
    """Stable 64-bit seed for an independent substream (e.g. one per sample)."""
    ss = np.random.SeedSequence([int(master), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --------------------------------------------------------------------------- PNG


def load_image(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.format != "PNG":
                raise ImageIOError(f"{path}: not a PNG file")
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise ImageIOError(f"{path}: unsupported PNG mode {mode!r} (need 8-bit gray or RGB)")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return as_image(arr.astype(DTYPE) / DTYPE(255.0))


def quantize(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 by clamp and round-half-to-even of v*255."""
    return np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    img = as_image(img)
    if img.shape[2] not in (1, 3):
        raise ValueError(f"can only save 1 or 3 channels, got {img.shape[2]}")
    q = quantize(img)
    q = q[:, :, 0] if q.shape[2] == 1 else q
    # fixed encoder settings keep output byte-identical between runs
    Image.fromarray(q).save(Path(path), format="PNG", optimize=False, compress_level=6)


# ------------------------------------------------------------------------- depth


def _check_depth(d: np.ndarray, source: object) -> np.ndarray:
    if not np.all(np.isfinite(d)):
        raise ImageIOError(f"{source}: depth contains non-finite values")
    if np.any(d < 0):
        raise ImageIOError(f"{source}: depth contains negative values")
    return d


def load_depth(path: str | os.PathLike) -> np.ndarray:
    """Read a single-channel PFM (values as-is) or 16-bit PNG (scaled to [0,1])."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".pfm":
        return _check_depth(_read_pfm(path), path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("I;16", "I;16B", "I"):
                raise ImageIOError(f"{path}: expected a 16-bit grayscale PNG, got mode {im.mode!r}")
            arr = np.asarray(im).astype(np.float64)
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return _check_depth((arr / 65535.0).astype(DTYPE), path)


def save_depth_png16(d: np.ndarray, path: str | os.PathLike) -> None:
    q = np.rint(np.clip(np.asarray(d, dtype=np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(Path(path), format="PNG")


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        # header: "Pf\n<w> <h>\n<scale>\n"; tokens may be split by any whitespace
        parts = []
        pos = 0
        while len(parts) < 4:
            while data[pos : pos + 1].isspace():
                pos += 1
            start = pos
            while not data[pos : pos + 1].isspace():
                pos += 1
            parts.append(data[start:pos].decode("ascii"))
        pos += 1  # single whitespace char before raster
        magic, w, h, scale = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
    except (IndexError, ValueError, UnicodeDecodeError) as exc:
        raise ImageIOError(f"{path}: malformed PFM header") from exc
    if magic != "Pf":
        raise ImageIOError(f"{path}: only single-channel PFM ('Pf') is supported, got {magic!r}")
    endian = "<" if scale < 0 else ">"
    n = w * h
    raster = data[pos : pos + 4 * n]
    if len(raster) != 4 * n:
        raise ImageIOError(f"{path}: truncated PFM raster")
    arr = np.frombuffer(raster, dtype=endian + "f4").reshape(h, w)
    # PFM rows run bottom-to-top
    return np.ascontiguousarray(arr[::-1]).astype(DTYPE)


def save_pfm(d: np.ndarray, path: str | os.PathLike) -> None:
    d = np.asarray(d, dtype="<f4")
    if d.ndim != 2:
        raise ValueError("PFM writer takes a single-channel (H, W) array")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(d[::-1]).tobytes())


# ------------------------------------------------------------------ convolution


def pad_replicate(x: np.ndarray, r: int) -> np.ndarray:
    """Edge-clamp pad the two spatial axes of (H, W, ...) or (N, H, W, C) input by r."""
    if r == 0:
        return x
    widths = [(0, 0)] * x.ndim
    ax = 1 if x.ndim == 4 else 0
    widths[ax] = widths[ax + 1] = (r, r)
    return np.pad(x, widths, mode="edge")


def pad_replicate_adjoint(g: np.ndarray, r: int) -> np.ndarray:
    """Adjoint of :func:`pad_replicate`: fold border gradients back onto the edges."""
    if r == 0:
        return g
    g = g.copy()
    ax = 1 if g.ndim == 4 else 0
    for axis in (ax, ax + 1):
        g = np.moveaxis(g, axis, 0)
        g[r] += g[:r].sum(axis=0)
        g[-r - 1] += g[-r:].sum(axis=0)
        g = np.moveaxis(g[r:-r], 0, axis)
    return np.ascontiguousarray(g)


def _check_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"kernel must be square 2-D, got shape {kernel.shape}")
    if kernel.shape[0] % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {kernel.shape[0]}")
    return kernel


def _correlate_valid(xp: np.ndarray, kernel: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    # shift-and-add keeps summation order fixed, so results are bitwise reproducible
    h, w = out_hw
    k = kernel.shape[0]
    out = np.zeros((h, w) + xp.shape[2:], dtype=xp.dtype)
    for a in range(k):
        for b in range(k):
            c = kernel[a, b]
            if c != 0:
                out += c * xp[a : a + h, b : b + w]
    return out


def _spatial_first(x: np.ndarray) -> np.ndarray:
    return np.moveaxis(x, 0, 2) if x.ndim == 4 else x


def _spatial_restore(x: np.ndarray, batched: bool) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, 2, 0)) if batched else x


def conv2d(x: np.ndarray, kernel: np.ndarray, padding: str = "replicate") -> np.ndarray:
    """Depthwise 2-D convolution of every channel of ``x`` with one kernel.

    ``x`` is ``(H, W)``, ``(H, W, C)`` or a batch ``(N, H, W, C)``; the output
    has the same shape and dtype. Only replicate (edge-clamp) padding is
    supported.
    """
    if padding != "replicate":
        raise ValueError(f"unsupported padding {padding!r}")
    kernel = _check_kernel(kernel)
    x = np.asarray(x)
    batched = x.ndim == 4
    xs = _spatial_first(x)
    r = kernel.shape[0] // 2
    widths = [(r, r), (r, r)] + [(0, 0)] * (xs.ndim - 2)
    flipped = kernel[::-1, ::-1].astype(x.dtype)
    out = _correlate_valid(np.pad(xs, widths, mode="edge"), flipped, xs.shape[:2])
    return _spatial_restore(out, batched)


def conv2d_adjoint(g: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input."""
    kernel = _check_kernel(kernel)
    g = np.asarray(g)
    batched = g.ndim == 4
    gs = _spatial_first(g)
    r = kernel.shape[0] // 2
    h, w = gs.shape[:2]
    widths = [(2 * r, 2 * r), (2 * r, 2 * r)] + [(0, 0)] * (gs.ndim - 2)
    # correlation with the flipped kernel == convolution with the kernel
    gp = _correlate_valid(np.pad(gs, widths), kernel.astype(g.dtype), (h + 2 * r, w + 2 * r))
    if r:
        gp = gp.copy()
        for axis in (0, 1):
            gp = np.moveaxis(gp, axis, 0)
            gp[r] += gp[:r].sum(axis=0)
            gp[-r - 1] += gp[-r:].sum(axis=0)
            gp = np.moveaxis(gp[r:-r], 0, axis)
    return _spatial_restore(np.ascontiguousarray(gp), batched)


def _conv1d_valid(xp: np.ndarray, taps: np.ndarray, axis: int, n: int) -> np.ndarray:
    out = None
    for a, c in enumerate(taps):
        sl = [slice(None)] * xp.ndim
        sl[axis] = slice(a, a + n)
        term = c * xp[tuple(sl)]
        out = term if out is None else out + term
    return out


def conv2d_separable(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """:func:`conv2d` with the rank-one kernel ``outer(taps, taps)``, in two 1-D passes.

    Edge clamping commutes with the per-axis passes, so this equals the 2-D
    replicate-padded convolution up to float rounding.
    """
    taps = np.asarray(taps)
    if taps.ndim != 1 or len(taps) % 2 == 0:
        raise ValueError("taps must be a 1-D array of odd length")
    x = np.asarray(x)
    r = len(taps) // 2
    flipped = taps[::-1].astype(x.dtype)
    ax0 = 1 if x.ndim == 4 else 0
    for axis in (ax0 + 1, ax0):
        widths = [(0, 0)] * x.ndim
        widths[axis] = (r, r)
        x = _conv1d_valid(np.pad(x, widths, mode="edge"), flipped, axis, x.shape[axis])
    return x


def conv2d_separable_adjoint(g: np.ndarray, taps: np.ndarray) -> np.ndarray:
    taps = np.asarray(taps)
    g = np.asarray(g)
    r = len(taps) // 2
    ax0 = 1 if g.ndim == 4 else 0
    for axis in (ax0, ax0 + 1):
        n = g.shape[axis]
        widths = [(0, 0)] * g.ndim
        widths[axis] = (2 * r, 2 * r)
        gp = _conv1d_valid(np.pad(g, widths), taps.astype(g.dtype), axis, n + 2 * r)
        gp = np.moveaxis(gp, axis, 0).copy()
        if r:
            gp[r] += gp[:r].sum(axis=0)
            gp[-r - 1] += gp[-r:].sum(axis=0)
            gp = gp[r:-r]
        g = np.ascontiguousarray(np.moveaxis(gp, 0, axis))
    return g


def resize_bilinear(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping."""
    x = as_image(x)
    h, w, _ = x.shape

    def axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo)

    r0, r1, fr = axis(h, height)
    c0, c1, fc = axis(w, width)
    top = x[r0][:, c0] * (1 - fc)[None, :, None] + x[r0][:, c1] * fc[None, :, None]
    bot = x[r1][:, c0] * (1 - fc)[None, :, None] + x[r1][:, c1] * fc[None, :, None]
    out = top * (1 - fr)[:, None, None] + bot * fr[:, None, None]
    return out.astype(x.dtype)


__all__ = [
    "DTYPE",
    "ImageIOError",
    "as_image",
    "check_image",
    "conv2d",
    "conv2d_adjoint",
    "conv2d_separable",
    "conv2d_separable_adjoint",
    "derive_seed",
    "load_depth",
    "load_image",
    "make_rng",
    "pad_replicate",
    "pad_replicate_adjoint",
    "quantize",
    "resize_bilinear",
    "save_depth_png16",
    "save_image",
    "save_pfm",
]
