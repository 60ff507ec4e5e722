# test_spectral.py
import numpy as np
import pytest

from afidaf.oracles import direct_circular_conv, naive_dft2
from afidaf.spectral import (Spectrum, circular_conv_fft, deinterleave, fft2, fft_axis, ifft2, interleave,
                             spectral_mul)
from afidaf.tensor import tensor
from afidaf.utils import ShapeError


@pytest.mark.parametrize("size", [1, 2, 3, 5, 8, 12, 16])
def test_fft_axis_matches_numpy(rng, size):
    a = rng.standard_normal((3, size)) + 1j * rng.standard_normal((3, size))
    assert np.abs(fft_axis(a) - np.fft.fft(a, axis=-1)).max() < 1e-10
    assert np.abs(fft_axis(a, inverse=True) - np.fft.ifft(a, axis=-1) * size).max() < 1e-10


@pytest.mark.parametrize("height, width", [(4, 4), (8, 8), (5, 6), (6, 7)])
def test_fft2_matches_naive_dft(rng, height, width):
    x = rng.standard_normal((2, 3, height, width))
    s = fft2(tensor(x))
    half = s.re.data + 1j * s.im.data
    for b in range(2):
        for c in range(3):
            reference = naive_dft2(x[b, c])[:, : width // 2 + 1]
            assert np.abs(half[b, c] - reference).max() < 1e-9


def test_self_conjugate_bins_have_zero_imaginary_part(rng):
    s = fft2(tensor(rng.standard_normal((1, 2, 6, 8))))
    for r in (0, 3):
        for c in (0, 4):
            assert np.all(s.im.data[:, :, r, c] == 0.0)


@pytest.mark.parametrize("height, width", [(4, 4), (8, 8), (7, 5), (16, 16)])
def test_roundtrip(rng, height, width):
    x = rng.standard_normal((2, 2, height, width))
    assert np.abs(ifft2(fft2(tensor(x))).data - x).max() < 1e-10


def test_parseval(rng):
    x = rng.standard_normal((1, 1, 8, 8))
    full = fft2(tensor(x)).full_plane()
    energy = (x ** 2).sum()
    assert abs(energy - (np.abs(full) ** 2).sum() / 64) / energy < 1e-10


def test_full_plane_matches_numpy(rng):
    x = rng.standard_normal((1, 2, 6, 5))
    assert np.abs(fft2(tensor(x)).full_plane() - np.fft.fft2(x)).max() < 1e-10


def test_ifft2_linearity(rng):
    s1 = fft2(tensor(rng.standard_normal((1, 2, 8, 8))))
    s2 = fft2(tensor(rng.standard_normal((1, 2, 8, 8))))
    combined = ifft2(s1 * 0.7 + s2 * -1.3).data
    separate = 0.7 * ifft2(s1).data - 1.3 * ifft2(s2).data
    assert np.abs(combined - separate).max() < 1e-10


@pytest.mark.parametrize("size", [4, 8, 16])
def test_convolution_theorem(rng, size):
    for _ in range(50 // 3 + 1):
        x = rng.standard_normal((1, 2, size, size))
        k = np.zeros((2, size, size))
        k[:, :3, :3] = rng.standard_normal((2, 3, 3))
        fast = circular_conv_fft(tensor(x), tensor(k)).data[0]
        assert np.abs(fast - direct_circular_conv(x[0], k)).max() < 1e-9


def test_fft2_of_constant_plane_is_dc_only():
    s = fft2(tensor(np.full((1, 1, 4, 4), 2.5)))
    re, im = s.re.data.copy(), s.im.data
    assert re[0, 0, 0, 0] == pytest.approx(40.0, abs=1e-12)
    re[0, 0, 0, 0] = 0.0
    assert np.abs(re).max() < 1e-12
    assert np.abs(im).max() < 1e-12


def test_ifft2_of_dc_only_spectrum_is_constant():
    re = np.zeros((1, 1, 4, 3))
    re[0, 0, 0, 0] = 8.0
    out = ifft2(Spectrum(tensor(re), tensor(np.zeros((1, 1, 4, 3))), 4)).data
    assert np.abs(out - 0.5).max() < 1e-12


def test_circular_conv_with_delta_is_identity(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    k = np.zeros((3, 8, 8))
    k[:, 0, 0] = 1.0
    assert np.abs(circular_conv_fft(tensor(x), tensor(k)).data - x).max() < 1e-12


def test_circular_conv_with_shifted_delta_rolls_rows(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    k = np.zeros((2, 8, 8))
    k[:, 1, 0] = 1.0
    out = circular_conv_fft(tensor(x), tensor(k)).data
    assert np.abs(out - np.roll(x, 1, axis=2)).max() < 1e-12


def test_circular_conv_kernel_shape_mismatch():
    with pytest.raises(ShapeError):
        circular_conv_fft(tensor(np.zeros((1, 2, 4, 4))), tensor(np.zeros((2, 4, 5))))


def test_spectral_mul_is_complex_product(rng):
    a = fft2(tensor(rng.standard_normal((1, 1, 4, 6))))
    b = fft2(tensor(rng.standard_normal((1, 1, 4, 6))))
    product = spectral_mul(a, b)
    expected = (a.re.data + 1j * a.im.data) * (b.re.data + 1j * b.im.data)
    assert np.allclose(product.re.data, expected.real)
    assert np.allclose(product.im.data, expected.imag)


def test_interleave_layout_and_inverse(rng):
    s = fft2(tensor(rng.standard_normal((2, 3, 4, 6))))
    t = interleave(s)
    assert t.shape == (2, 6, 4, 4)
    assert np.array_equal(t.data[:, 2], s.re.data[:, 1])
    assert np.array_equal(t.data[:, 5], s.im.data[:, 2])
    back = deinterleave(t, 6)
    assert np.array_equal(back.re.data, s.re.data)
    assert np.array_equal(back.im.data, s.im.data)


def test_spectrum_validates_half_width():
    with pytest.raises(ShapeError):
        Spectrum(tensor(np.zeros((1, 1, 4, 4))), tensor(np.zeros((1, 1, 4, 4))), 4)
