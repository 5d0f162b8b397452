import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from hazediff.imaging import (
    ImageIOError,
    conv2d,
    conv2d_adjoint,
    conv2d_separable,
    conv2d_separable_adjoint,
    load_depth,
    load_image,
    make_rng,
    pad_replicate,
    pad_replicate_adjoint,
    resize_bilinear,
    save_depth_png16,
    save_image,
    save_pfm,
)


def naive_conv(x, k):
    """Per-pixel double loop: true convolution with edge clamping."""
    h, w, c = x.shape
    r = k.shape[0] // 2
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    ii = min(max(i - a, 0), h - 1)
                    jj = min(max(j - b, 0), w - 1)
                    out[i, j] += k[a + r, b + r] * x[ii, jj]
    return out


def _png(path, arr, mode):
    Image.fromarray(arr, mode=mode).save(path)


# ---------------------------------------------------------------- PNG I/O


def test_load_black_and_white_rgb(tmp_path):
    _png(tmp_path / "b.png", np.zeros((4, 4, 3), np.uint8), "RGB")
    _png(tmp_path / "w.png", np.full((4, 4, 3), 255, np.uint8), "RGB")
    b, w = load_image(tmp_path / "b.png"), load_image(tmp_path / "w.png")
    assert b.shape == (4, 4, 3) and b.dtype == np.float32
    assert np.all(b == 0) and np.all(w == 1)


def test_load_scales_by_255(tmp_path):
    _png(tmp_path / "g.png", np.full((2, 3), 128, np.uint8), "L")
    g = load_image(tmp_path / "g.png")
    assert g.shape == (2, 3, 1)
    assert np.allclose(g, 128 / 255, atol=1e-7)


def test_load_rejects_missing_and_16bit(tmp_path):
    with pytest.raises((ImageIOError, OSError)):
        load_image(tmp_path / "nope.png")
    Image.fromarray(np.full((4, 4), 40000, np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "d.png")


def test_save_clamps_and_roundtrips(tmp_path):
    x = np.array([[[0.5, 1.7, -0.2]]], dtype=np.float32)
    save_image(x, tmp_path / "x.png")
    raw = np.asarray(Image.open(tmp_path / "x.png"))
    assert raw[0, 0, 1] == 255 and raw[0, 0, 2] == 0
    back = load_image(tmp_path / "x.png")
    assert abs(back[0, 0, 0] - 0.5) <= 1 / 255


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_roundtrip_error_bound(tmp_path_factory, seed):
    x = make_rng(seed).uniform(-0.5, 1.5, size=(5, 4, 3)).astype(np.float32)
    path = tmp_path_factory.mktemp("rt") / "x.png"
    save_image(x, path)
    assert np.max(np.abs(load_image(path) - np.clip(x, 0, 1))) <= 1 / 255 + 1e-7


def test_save_is_byte_stable(tmp_path):
    x = make_rng(1).uniform(size=(8, 8, 3)).astype(np.float32)
    save_image(x, tmp_path / "a.png")
    save_image(x, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


# ---------------------------------------------------------------- depth I/O


def test_depth_png16_half(tmp_path):
    Image.fromarray(np.full((3, 3), 32768, np.uint16)).save(tmp_path / "d.png")
    d = load_depth(tmp_path / "d.png")
    assert np.allclose(d, 32768 / 65535)


def test_pfm_zero_and_negative(tmp_path):
    save_pfm(np.zeros((3, 4), np.float32), tmp_path / "z.pfm")
    assert np.all(load_depth(tmp_path / "z.pfm") == 0)
    # write a negative value by hand, bypassing the writer's checks
    raw = np.full((2, 2), -1.0, dtype="<f4")
    (tmp_path / "n.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + raw.tobytes())
    with pytest.raises(ImageIOError):
        load_depth(tmp_path / "n.pfm")


def test_pfm_roundtrip_and_row_order(tmp_path):
    d = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    save_pfm(d, tmp_path / "d.pfm")
    assert np.array_equal(load_depth(tmp_path / "d.pfm"), d)
    # PFM stores the bottom row first
    body = (tmp_path / "d.pfm").read_bytes().split(b"\n", 3)[3]
    assert np.frombuffer(body, "<f4")[:4].tolist() == d[-1].tolist()


def test_png16_writer(tmp_path):
    d = np.linspace(0, 1, 16, dtype=np.float32).reshape(4, 4)
    save_depth_png16(d, tmp_path / "d.png")
    back = load_depth(tmp_path / "d.png")
    assert np.max(np.abs(back - d)) <= 0.5 / 65535 + 1e-7


def test_malformed_pfm(tmp_path):
    (tmp_path / "m.pfm").write_bytes(b"PF\n2 2\n-1.0\n")
    with pytest.raises(ImageIOError):
        load_depth(tmp_path / "m.pfm")


# ---------------------------------------------------------------- conv


def test_identity_kernel_exact():
    x = make_rng(0).normal(size=(6, 5, 2)).astype(np.float32)
    assert np.array_equal(conv2d(x, np.ones((1, 1))), x)


def test_constant_preserved():
    x = np.full((7, 6, 3), 0.3, np.float32)
    k = make_rng(1).uniform(size=(5, 5))
    k /= k.sum()
    assert np.allclose(conv2d(x, k), 0.3, atol=1e-7)


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        conv2d(np.zeros((4, 4, 1)), np.ones((2, 2)))


def test_ramp_box_matches_loop():
    x = (np.arange(25, dtype=np.float32) / 24).reshape(5, 5, 1)
    k = np.full((3, 3), 1 / 9)
    assert np.max(np.abs(conv2d(x, k) - naive_conv(x, k))) <= 1e-6


def test_asymmetric_kernel_matches_loop():
    # distinguishes convolution from correlation
    rng = make_rng(2)
    x = rng.normal(size=(6, 7, 2))
    k = rng.normal(size=(3, 3))
    assert np.max(np.abs(conv2d(x, k) - naive_conv(x, k))) <= 1e-12


def test_linearity():
    rng = make_rng(3)
    x, y = rng.normal(size=(2, 8, 8, 3))
    k = rng.normal(size=(5, 5))
    lhs = conv2d(2.5 * x - 0.7 * y, k)
    rhs = 2.5 * conv2d(x, k) - 0.7 * conv2d(y, k)
    assert np.max(np.abs(lhs - rhs)) <= 1e-5 * np.max(np.abs(rhs))


@pytest.mark.parametrize("shape", [(9, 7), (9, 7, 2), (2, 9, 7, 3)])
def test_adjoints(shape):
    rng = make_rng(4)
    x, g = rng.normal(size=(2,) + shape)
    k = rng.normal(size=(5, 5))
    assert np.isclose(np.sum(conv2d(x, k) * g), np.sum(x * conv2d_adjoint(g, k)), rtol=1e-12)
    taps = rng.uniform(size=3)
    assert np.isclose(
        np.sum(conv2d_separable(x, taps) * g), np.sum(x * conv2d_separable_adjoint(g, taps)), rtol=1e-12
    )
    assert np.isclose(np.sum(pad_replicate(x, 2) * pad_replicate(g, 2)), np.sum(x * pad_replicate_adjoint(pad_replicate(g, 2), 2)))


def test_separable_equals_2d():
    rng = make_rng(5)
    x = rng.normal(size=(3, 10, 12, 2))
    taps = rng.uniform(size=7)
    assert np.max(np.abs(conv2d_separable(x, taps) - conv2d(x, np.outer(taps, taps)))) <= 1e-12


def test_rng_streams_identical():
    a, b = make_rng(123).random(10**6), make_rng(123).random(10**6)
    assert np.array_equal(a, b)
    assert not np.array_equal(a[:10], make_rng(124).random(10))


def test_resize_bilinear_constant_and_identity():
    x = make_rng(6).uniform(size=(5, 7, 3)).astype(np.float32)
    assert np.allclose(resize_bilinear(x, 5, 7), x)
    c = np.full((4, 4, 1), 0.25, np.float32)
    assert np.allclose(resize_bilinear(c, 9, 3), 0.25)
