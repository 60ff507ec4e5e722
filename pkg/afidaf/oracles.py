# afidaf/oracles.py
"""
Implementaciones de referencia deliberadamente directas (lazos explícitos).

Las usan las pruebas y las suites de `verify` para contrastar las
operaciones rápidas. Trabajan sobre arreglos numpy en f64.
"""
import math
from itertools import product

import numpy as np


def naive_dft2(plane):
    """DFT 2-D por doble suma O(N²); devuelve el plano completo complejo"""
    plane = np.asarray(plane, dtype=float)
    height, width = plane.shape
    out = np.zeros((height, width), dtype=complex)
    for u, v in product(range(height), range(width)):
        total = 0j
        for m, n in product(range(height), range(width)):
            total += plane[m, n] * np.exp(-2j * np.pi * (u * m / height + v * n / width))
        out[u, v] = total
    return out


def direct_circular_conv(x, k):
    """y[c,m,n] = Σ_{p,q} x[c,p,q]·k[c,(m−p) mod H,(n−q) mod W] para x de forma C×H×W"""
    x = np.asarray(x, dtype=float)
    channels, height, width = x.shape
    out = np.zeros_like(x)
    for c, m, n in product(range(channels), range(height), range(width)):
        total = 0.0
        for p, q in product(range(height), range(width)):
            total += x[c, p, q] * k[c, (m - p) % height, (n - q) % width]
        out[c, m, n] = total
    return out


def naive_conv2d(x, weight, bias=None, stride=(1, 1), dilation=(1, 1), groups=1, padding=(0, 0, 0, 0)):
    """Correlación cruzada con padding de ceros en seis lazos anidados"""
    x = np.asarray(x, dtype=float)
    batch, in_ch, height, width = x.shape
    out_ch, cin_g, kh, kw = weight.shape
    top, bottom, left, right = padding
    padded = np.zeros((batch, in_ch, height + top + bottom, width + left + right))
    padded[:, :, top:top + height, left:left + width] = x
    out_h = (height + top + bottom - dilation[0] * (kh - 1) - 1) // stride[0] + 1
    out_w = (width + left + right - dilation[1] * (kw - 1) - 1) // stride[1] + 1
    cout_g = out_ch // groups
    out = np.zeros((batch, out_ch, out_h, out_w))
    for b, o, i, j in product(range(batch), range(out_ch), range(out_h), range(out_w)):
        g = o // cout_g
        total = 0.0 if bias is None else float(bias[o])
        for ci in range(cin_g):
            for a, e in product(range(kh), range(kw)):
                r = i * stride[0] + a * dilation[0]
                s = j * stride[1] + e * dilation[1]
                total += padded[b, g * cin_g + ci, r, s] * weight[o, ci, a, e]
        out[b, o, i, j] = total
    return out


def triple_loop_matmul(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            total = 0.0
            for k in range(inner):
                total += a[i, k] * b[k, j]
            out[i, j] = total
    return out


def broadcast_elementwise(op, a, b):
    """Aplica op escalar a escalar recorriendo la forma de broadcast"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape, b.shape)
    out = np.zeros(shape)
    for index in np.ndindex(*shape):
        ia = tuple(0 if n == 1 else index[len(index) - a.ndim + d] for d, n in enumerate(a.shape))
        ib = tuple(0 if n == 1 else index[len(index) - b.ndim + d] for d, n in enumerate(b.shape))
        out[index] = op(float(a[ia]), float(b[ib]))
    return out


def broadcast_shape_pairs(max_rank=4, max_extent=5):
    """
    Enumera (forma, pareja) para toda forma de rango 1..max_rank con extents en
    1..max_extent. La pareja conserva o colapsa a 1 cada dimensión y puede
    descartar dimensiones iniciales (incluido el escalar de rango 0).
    """
    for rank in range(1, max_rank + 1):
        for shape in product(range(1, max_extent + 1), repeat=rank):
            partners = set()
            for keep in product((True, False), repeat=rank):
                collapsed = tuple(n if k else 1 for n, k in zip(shape, keep))
                for drop in range(rank + 1):
                    partners.add(collapsed[drop:])
            for other in sorted(partners):
                yield shape, other


def block_diagonal(weight):
    """Matriz densa (Dout, Din) equivalente a pesos agrupados (g, Dout/g, Din/g)"""
    groups, out_g, in_g = weight.shape
    dense = np.zeros((groups * out_g, groups * in_g))
    for g in range(groups):
        dense[g * out_g:(g + 1) * out_g, g * in_g:(g + 1) * in_g] = weight[g]
    return dense


def shuffle_permutation(channels, groups):
    """perm[nueva posición] = canal original, según i·(C/g)+j → j·g+i"""
    per = channels // groups
    perm = np.empty(channels, dtype=int)
    for i in range(groups):
        for j in range(per):
            perm[j * groups + i] = i * per + j
    return perm


def explicit_layer_norm(x, axes, gamma, beta, eps=1e-5):
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=axes, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
    shape = [x.shape[a] if a in axes else 1 for a in range(x.ndim)]
    return (x - mean) / np.sqrt(var + eps) * np.reshape(gamma, shape) + np.reshape(beta, shape)


def direct_cross_entropy(logits, labels):
    total = 0.0
    for row, label in zip(np.asarray(logits, dtype=float), labels):
        total += -math.log(math.exp(row[label]) / sum(math.exp(v) for v in row))
    return total / len(labels)


def sort_top_k(logits, labels, k):
    """Top-k por ordenamiento explícito de pares (-valor, índice)"""
    hits = 0
    for row, label in zip(np.asarray(logits), labels):
        ranked = sorted(range(len(row)), key=lambda c: (-row[c], c))
        hits += int(label in ranked[:k])
    return hits / len(labels)


def adamw_reference(p, grad, state, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8, decay=True):
    """Un paso escalar de AdamW; state = [t, m, v] se actualiza en su lugar"""
    beta1, beta2 = betas
    state[0] += 1
    t = state[0]
    if decay:
        p = p * (1 - lr * weight_decay)
    state[1] = beta1 * state[1] + (1 - beta1) * grad
    state[2] = beta2 * state[2] + (1 - beta2) * grad * grad
    m_hat = state[1] / (1 - beta1 ** t)
    v_hat = state[2] / (1 - beta2 ** t)
    return p - lr * m_hat / (math.sqrt(v_hat) + eps)


def naive_idft2(full):
    """Inversa normalizada 1/(H·W) por doble suma; devuelve complejo"""
    full = np.asarray(full, dtype=complex)
    height, width = full.shape
    return np.conj(naive_dft2_complex(np.conj(full))) / (height * width)


def naive_dft2_complex(plane):
    plane = np.asarray(plane, dtype=complex)
    height, width = plane.shape
    rows = np.exp(-2j * np.pi * np.outer(np.arange(height), np.arange(height)) / height)
    cols = np.exp(-2j * np.pi * np.outer(np.arange(width), np.arange(width)) / width)
    return rows @ plane @ cols


def hermitian_extend(half, width):
    """Plano completo H×W a partir de H×(W//2+1) columnas: X[u, v] = conj(X[−u, W−v]) para v fuera del medio plano"""
    height, width_half = half.shape
    full = np.zeros((height, width), dtype=complex)
    for u in range(height):
        for v in range(width):
            if v < width_half:
                full[u, v] = half[u, v]
            else:
                full[u, v] = np.conj(half[(-u) % height, width - v])
    return full


def _spectral_filter_reference(x, filter_bins):
    """
    ifft2(F(S)) con DFT ingenua: S por plano, (re, im) intercalados en 2C
    canales, F aplicado sobre B×2C×H×Wf y reconstrucción hermítica.
    """
    x = np.asarray(x, dtype=float)
    batch, channels, height, width = x.shape
    width_half = width // 2 + 1
    inter = np.zeros((batch, 2 * channels, height, width_half))
    for b, c in product(range(batch), range(channels)):
        spec = naive_dft2(x[b, c])[:, :width_half]
        inter[b, 2 * c] = spec.real
        inter[b, 2 * c + 1] = spec.imag
    filtered = filter_bins(inter)
    out = np.zeros_like(x)
    for b, c in product(range(batch), range(channels)):
        half = filtered[b, 2 * c] + 1j * filtered[b, 2 * c + 1]
        out[b, c] = naive_idft2(hermitian_extend(half, width)).real
    return out


def m_c_reference(x, w1, b1, w2, b2):
    """Máscara de canales de Fourier con matrices densas diagonales por bloques"""
    dense1, dense2 = block_diagonal(w1), block_diagonal(w2)

    def mask_bins(inter):
        feats = np.moveaxis(inter, 1, -1)
        hidden = np.maximum(feats @ dense1.T + b1, 0.0)
        mask = np.moveaxis(hidden @ dense2.T + b2, -1, 1)
        return mask * inter

    return _spectral_filter_reference(x, mask_bins)


def f_conv_reference(x, weight, bias, padding):
    """Conv pequeña agrupada por canal sobre el medio plano intercalado"""
    channels = x.shape[1]
    return _spectral_filter_reference(
        x, lambda inter: naive_conv2d(inter, weight, bias, groups=channels, padding=padding))
