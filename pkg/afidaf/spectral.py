# afidaf/spectral.py
"""
Transformada de Fourier 2D sobre el plano espacial de tensores B×C×H×W.

Convención: transformada directa sin normalizar, inversa normalizada por
1/(H·W). El espectro de una señal real se guarda en medio plano
(W//2 + 1 columnas) como dos arreglos reales (re, im).

Las transformadas 1-D usan Cooley-Tukey radix-2 iterativo cuando la
longitud es potencia de dos y Bluestein (chirp-z) en otro caso.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor, _record, getitem, reshape, stack
from .utils import ShapeError, record_flops


# --- TRANSFORMADAS 1-D (numpy complejo) ---
@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size):
    return np.exp(-2j * np.pi * np.arange(size // 2) / size)


def _radix2(a):
    """DFT directa por mariposas sobre el último eje (longitud potencia de dos)"""
    n = a.shape[-1]
    lead = a.shape[:-1]
    a = a[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        blocks = a.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * _twiddles(size)
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        size *= 2
    return a


@lru_cache(maxsize=None)
def _chirp(n):
    # n² mod 2n mantiene el argumento acotado para longitudes grandes
    k = np.arange(n)
    return np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)


@lru_cache(maxsize=None)
def _bluestein_kernel(n):
    m = 1 << (2 * n - 2).bit_length()
    w = _chirp(n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    return m, _radix2(b)


def _bluestein(a):
    """DFT de longitud arbitraria como convolución circular de potencia de dos"""
    n = a.shape[-1]
    m, b_hat = _bluestein_kernel(n)
    w = _chirp(n)
    padded = np.zeros(a.shape[:-1] + (m,), dtype=complex)
    padded[..., :n] = a * w
    conv = np.conj(_radix2(np.conj(_radix2(padded) * b_hat))) / m
    return conv[..., :n] * w


def fft_axis(a, axis=-1, inverse=False):
    """
    DFT 1-D sin normalizar a lo largo de `axis`.

    inverse=True usa el exponente positivo (sin dividir entre n).
    """
    a = np.moveaxis(np.asarray(a, dtype=complex), axis, -1)
    n = a.shape[-1]
    if inverse:
        a = np.conj(a)
    if n == 1:
        out = a.copy()
    elif n & (n - 1) == 0:
        out = _radix2(a)
    else:
        out = _bluestein(a)
    if inverse:
        out = np.conj(out)
    return np.moveaxis(out, -1, axis)


def _fft2_full(a, inverse=False):
    return fft_axis(fft_axis(a, -1, inverse), -2, inverse)


def _half_width(width):
    return width // 2 + 1


@lru_cache(maxsize=None)
def _self_conjugate(height, width):
    """Máscara de bins autoconjugados (DC y Nyquist) del medio plano"""
    mask = np.zeros((height, _half_width(width)), dtype=bool)
    rows = [0] + ([height // 2] if height % 2 == 0 else [])
    cols = [0] + ([width // 2] if width % 2 == 0 else [])
    for r in rows:
        for c in cols:
            mask[r, c] = True
    return mask


@lru_cache(maxsize=None)
def _column_weights(width):
    """Peso de cada columna del medio plano al reconstruir el plano completo"""
    weights = np.full(_half_width(width), 2.0)
    weights[0] = 1.0
    if width % 2 == 0:
        weights[-1] = 1.0
    return weights


def _fft_flops(planes, height, width):
    n = height * width
    return 5.0 * n * math.log2(n) * planes if n > 1 else 0


# --- ESPECTRO ---
@dataclass(frozen=True)
class Spectrum:
    """Espectro de medio plano de un tensor real: re, im de forma B×C×H×(W//2+1)"""

    re: Tensor
    im: Tensor
    orig_width: int

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re {self.re.shape} e im {self.im.shape} difieren")
        if self.re.ndim != 4 or self.re.shape[-1] != _half_width(self.orig_width):
            raise ShapeError(f"espectro {self.re.shape} inválido para ancho {self.orig_width}")

    @property
    def batch(self):
        return self.re.shape[0]

    @property
    def channels(self):
        return self.re.shape[1]

    @property
    def height(self):
        return self.re.shape[2]

    @property
    def width_half(self):
        return self.re.shape[3]

    def __add__(self, other):
        return Spectrum(self.re + other.re, self.im + other.im, self.orig_width)

    def __mul__(self, scalar):
        return Spectrum(self.re * scalar, self.im * scalar, self.orig_width)

    __rmul__ = __mul__

    def full_plane(self):
        """Reconstruye el plano completo H×W por simetría hermítica (numpy complejo)"""
        half = self.re.data + 1j * self.im.data
        height, width = self.height, self.orig_width
        full = np.zeros(half.shape[:-1] + (width,), dtype=complex)
        full[..., : self.width_half] = half
        rows = (-np.arange(height)) % height
        for col in range(self.width_half, width):
            full[..., col] = np.conj(half[..., rows, width - col])
        return full


# --- OPERACIONES DIFERENCIABLES ---
def _rfft2_packed(x: Tensor) -> Tensor:
    height, width = x.shape[-2:]
    half = _half_width(width)
    conj_mask = _self_conjugate(height, width)
    record_flops("fft", _fft_flops(x.shape[0] * x.shape[1], height, width))

    spec = _fft2_full(x.data)[..., :half]
    packed = np.stack([spec.real, np.where(conj_mask, 0.0, spec.imag)], axis=-1)

    def vjp(g):
        grad = g[..., 0] + 1j * np.where(conj_mask, 0.0, g[..., 1])
        full = np.zeros(grad.shape[:-1] + (width,), dtype=complex)
        full[..., :half] = grad
        return (_fft2_full(full, inverse=True).real.astype(x.data.dtype),)
    return _record(packed.astype(x.data.dtype), "fft2", (x,), vjp)


def fft2(x: Tensor) -> Spectrum:
    """
    DFT 2-D directa sin normalizar de cada plano (b, c) de un tensor real.

    Los bins autoconjugados (DC y, con extensiones pares, Nyquist) tienen
    parte imaginaria exactamente cero.
    """
    if x.ndim != 4:
        raise ShapeError(f"fft2 espera B×C×H×W, recibió {x.shape}")
    packed = _rfft2_packed(x)
    return Spectrum(getitem(packed, (Ellipsis, 0)), getitem(packed, (Ellipsis, 1)), x.shape[-1])


def ifft2(s: Spectrum) -> Tensor:
    """
    Inversa normalizada (1/(H·W)) de un espectro de medio plano; salida real.

    Equivale a la parte real de la inversa del plano completo reconstruido
    por simetría hermítica.
    """
    height, width = s.height, s.orig_width
    weights = _column_weights(width)
    scale = 1.0 / (height * width)
    dtype = s.re.data.dtype
    record_flops("fft", _fft_flops(s.batch * s.channels, height, width))

    full = np.zeros(s.re.shape[:-1] + (width,), dtype=complex)
    full[..., : s.width_half] = (s.re.data + 1j * s.im.data) * weights
    out = _fft2_full(full, inverse=True).real * scale

    def vjp(g):
        grad = _fft2_full(g)[..., : s.width_half] * (weights * scale)
        return grad.real.astype(dtype), grad.imag.astype(dtype)
    return _record(out.astype(dtype), "ifft2", (s.re, s.im), vjp)


def spectral_mul(a: Spectrum, b: Spectrum) -> Spectrum:
    """Producto complejo bin a bin (con broadcast sobre lote/canales)"""
    re = a.re * b.re - a.im * b.im
    im = a.re * b.im + a.im * b.re
    return Spectrum(re, im, a.orig_width)


def circular_conv_fft(x: Tensor, k: Tensor) -> Tensor:
    """
    Convolución circular por canal vía teorema de convolución.

    y[b,c,m,n] = Σ_{p,q} x[b,c,p,q] · k[c,(m−p) mod H,(n−q) mod W]
    """
    if x.ndim != 4 or k.ndim != 3 or tuple(k.shape) != tuple(x.shape[1:]):
        raise ShapeError(f"kernel {k.shape} debe coincidir con el plano {x.shape[1:]}")
    kernel = reshape(k, (1,) + tuple(k.shape))
    return ifft2(spectral_mul(fft2(x), fft2(kernel)))


def interleave(s: Spectrum) -> Tensor:
    """Apila (re, im) por canal: B×2C×H×Wf con 2c = re_c y 2c+1 = im_c"""
    b, c, h, wf = s.re.shape
    return reshape(stack([s.re, s.im], axis=2), (b, 2 * c, h, wf))


def deinterleave(t: Tensor, orig_width: int) -> Spectrum:
    """Inversa de interleave()"""
    b, c2, h, wf = t.shape
    pairs = reshape(t, (b, c2 // 2, 2, h, wf))
    return Spectrum(getitem(pairs, (slice(None), slice(None), 0)),
                    getitem(pairs, (slice(None), slice(None), 1)), orig_width)
