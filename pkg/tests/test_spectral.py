import numpy as np
import pytest

from hazediff.imaging import make_rng
from hazediff.spectral import (
    RadialPSD,
    average_psd,
    default_bins,
    flat_reference,
    kl_to_flat,
    mean_power_spectrum,
    power_spectrum_2d,
    psd_kl,
    radial_psd,
)


def naive_power(x):
    """|DFT|^2 / (HW) by direct summation, centred with DC at (H//2, W//2)."""
    h, w = x.shape
    out = np.zeros((h, w))
    for a in range(h):
        for b in range(w):
            u, v = a - h // 2, b - w // 2
            total = 0j
            for m in range(h):
                for n in range(w):
                    total += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[a, b] = abs(total) ** 2 / (h * w)
    return out


def naive_radial(power, bins):
    """Loop over frequency bins; annulus j > 0 covers radii in ((j-1) d, j d], d = 0.5/(bins-1)."""
    h, w = power.shape
    d = 0.5 / (bins - 1)
    sums, counts = np.zeros(bins), np.zeros(bins)
    for a in range(h):
        for b in range(w):
            r = np.hypot((a - h // 2) / h, (b - w // 2) / w)
            if r == 0:
                j = 0
            else:
                j = int(np.ceil(r / d - 1e-9))
                if j >= bins:
                    continue
            sums[j] += power[a, b]
            counts[j] += 1
    return sums / np.maximum(counts, 1), counts


def test_parseval():
    rng = make_rng(0)
    for shape in [(8, 8), (17, 12), (64, 64)]:
        x = rng.normal(size=shape)
        assert abs(power_spectrum_2d(x).sum() / np.sum(x**2) - 1) <= 1e-5


def test_power_matches_naive_dft():
    x = make_rng(1).uniform(size=(8, 8))
    assert np.max(np.abs(power_spectrum_2d(x) - naive_power(x))) <= 1e-6
    y = make_rng(2).uniform(size=(5, 6))
    assert np.max(np.abs(power_spectrum_2d(y) - naive_power(y))) <= 1e-6


def test_radial_psd_matches_naive_oracle():
    x = make_rng(3).uniform(size=(8, 8))
    curve = radial_psd(x)
    ref, counts = naive_radial(naive_power(x), 4)
    assert curve.bins == default_bins(8, 8) == 4
    assert np.max(np.abs(curve.power - ref)) <= 1e-6
    assert np.array_equal(curve.counts, counts)
    assert curve.counts[0] == 1 and curve.freq[0] == 0.0


def test_colour_channels_averaged():
    x = make_rng(4).normal(size=(16, 16, 3))
    per = [power_spectrum_2d(x[:, :, c]) for c in range(3)]
    assert np.allclose(mean_power_spectrum(x), np.mean(per, axis=0))
    with pytest.raises(ValueError):
        power_spectrum_2d(x)


def test_bin_limits():
    x = np.zeros((16, 16))
    with pytest.raises(ValueError):
        radial_psd(x, bins=9)
    with pytest.raises(ValueError):
        radial_psd(x, bins=1)
    assert radial_psd(x, bins=8).bins == 8


def test_flat_reference_and_self_kl():
    f = flat_reference(4)
    assert np.array_equal(f.power, [0.25] * 4)
    assert psd_kl(f, f) == 0.0
    with pytest.raises(ValueError):
        flat_reference(1)


def test_kl_known_value():
    # DC is dropped: compare (0.75, 0.25) against (0.5, 0.5)
    p = RadialPSD(np.array([0, 0.125, 0.375]), np.array([9.0, 0.75, 0.25]), np.ones(3, int))
    q = RadialPSD(np.array([0, 0.125, 0.375]), np.array([1.0, 0.5, 0.5]), np.ones(3, int))
    expected = 0.75 * np.log(1.5) + 0.25 * np.log(0.5)
    assert abs(psd_kl(p, q) - expected) <= 1e-9
    assert abs(expected - 0.1308) < 1e-4


def test_kl_properties():
    rng = make_rng(5)
    a = radial_psd(rng.normal(size=(32, 32)))
    b = radial_psd(rng.uniform(size=(32, 32)) ** 3)
    assert psd_kl(a, b) > 0 and psd_kl(b, a) > 0
    scaled = RadialPSD(a.freq, 7.5 * a.power, a.counts)
    assert psd_kl(a, scaled) <= 1e-12  # scale invariant after normalisation
    with pytest.raises(ValueError):
        psd_kl(a, flat_reference(a.bins + 1))


def test_white_noise_flat_after_averaging():
    rng = make_rng(0)
    curves = [radial_psd(rng.standard_normal((64, 64))) for _ in range(100)]
    avg = average_psd(curves)
    assert kl_to_flat(avg) <= 0.01
    assert avg.power[1:].max() / avg.power[1:].min() <= 1.1


def test_white_noise_bins_within_standard_error():
    # each annulus mean is unbiased with variance 1/(count * draws)
    rng = make_rng(6)
    draws = 100
    avg = average_psd([radial_psd(rng.standard_normal((64, 64))) for _ in range(draws)])
    z = (avg.power[1:] - 1.0) * np.sqrt(avg.counts[1:] * draws)
    assert np.max(np.abs(z)) <= 5.0


def test_kl_decreases_with_averaging():
    rng = make_rng(7)
    curves = [radial_psd(rng.standard_normal((64, 64))) for _ in range(100)]
    one = kl_to_flat(curves[0])
    ten = kl_to_flat(average_psd(curves[:10]))
    hundred = kl_to_flat(average_psd(curves))
    assert one > ten > hundred


def test_natural_image_far_from_flat():
    # a 1/f^2 field has most of its power at low frequencies
    rng = make_rng(8)
    f = np.fft.fftfreq(64)
    r = np.hypot(f[:, None], f[None, :])
    r[0, 0] = 1
    field = np.real(np.fft.ifft2(np.exp(2j * np.pi * rng.uniform(size=(64, 64))) / r))
    assert kl_to_flat(radial_psd(field)) > 0.5


def test_csv():
    text = radial_psd(np.ones((8, 8))).to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "frequency,power" and len(lines) == 5
