# afidaf/ops.py
"""Primitivas convolucionales y de normalización con las que se arman los bloques."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _record, matmul, reduce_mean, reshape, transpose
from .utils import ContractError, ShapeError, record_flops


def _pair(value):
    if isinstance(value, int):
        return (value, value)
    return tuple(value)


@dataclass(frozen=True)
class Conv2dSpec:
    """
    Geometría de una convolución 2-D (correlación cruzada, padding con ceros).

    padding = (arriba, abajo, izquierda, derecha).
    """

    in_ch: int
    out_ch: int
    kernel: tuple = (1, 1)
    stride: tuple = (1, 1)
    dilation: tuple = (1, 1)
    groups: int = 1
    padding: tuple = (0, 0, 0, 0)
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "dilation", _pair(self.dilation))
        object.__setattr__(self, "padding", tuple(self.padding))
        if min(self.in_ch, self.out_ch, self.groups) < 1:
            raise ShapeError(f"canales y grupos deben ser positivos: {self}")
        if self.in_ch % self.groups or self.out_ch % self.groups:
            raise ShapeError(
                f"in_ch={self.in_ch} y out_ch={self.out_ch} deben ser divisibles entre groups={self.groups}")
        if len(self.padding) != 4 or min(self.padding) < 0:
            raise ShapeError(f"padding inválido: {self.padding}")

    @classmethod
    def same(cls, in_ch, out_ch, kernel, groups=1, dilation=1, stride=1, bias=True):
        """Padding que conserva la resolución con stride 1 (y la divide con stride 2)"""
        kh, kw = _pair(kernel)
        dh, dw = _pair(dilation)
        total_h, total_w = dh * (kh - 1), dw * (kw - 1)
        padding = (total_h // 2, total_h - total_h // 2, total_w // 2, total_w - total_w // 2)
        return cls(in_ch, out_ch, (kh, kw), _pair(stride), (dh, dw), groups, padding, bias)

    @property
    def depthwise(self):
        return self.groups == self.in_ch == self.out_ch

    @property
    def weight_shape(self):
        return (self.out_ch, self.in_ch // self.groups) + self.kernel

    def output_size(self, height, width):
        top, bottom, left, right = self.padding
        (kh, kw), (sh, sw), (dh, dw) = self.kernel, self.stride, self.dilation
        out_h = (height + top + bottom - dh * (kh - 1) - 1) // sh + 1
        out_w = (width + left + right - dw * (kw - 1) - 1) // sw + 1
        return out_h, out_w


def conv2d(x: Tensor, spec: Conv2dSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """
    Convolución agrupada por im2col; diferenciable respecto a x, pesos y bias.

    El kernel no se voltea (correlación cruzada) y el padding es con ceros.
    """
    if x.ndim != 4 or x.shape[1] != spec.in_ch:
        raise ShapeError(f"conv2d espera B×{spec.in_ch}×H×W, recibió {x.shape}")
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeError(f"pesos {weight.shape} != {spec.weight_shape}")
    if bias is not None and tuple(bias.shape) != (spec.out_ch,):
        raise ShapeError(f"bias {bias.shape} != ({spec.out_ch},)")
    batch, _, height, width = x.shape
    out_h, out_w = spec.output_size(height, width)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"la entrada {height}×{width} es muy pequeña para {spec}")

    top, bottom, left, right = spec.padding
    (kh, kw), (sh, sw), (dh, dw) = spec.kernel, spec.stride, spec.dilation
    g = spec.groups
    cin_g, cout_g = spec.in_ch // g, spec.out_ch // g
    taps = cin_g * kh * kw

    padded = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    cols = np.empty((batch, spec.in_ch, kh, kw, out_h, out_w), dtype=padded.dtype)
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dh, j * dw
            cols[:, :, i, j] = padded[:, :, r0:r0 + sh * (out_h - 1) + 1:sh, c0:c0 + sw * (out_w - 1) + 1:sw]
    cols = cols.reshape(batch, g, taps, out_h * out_w)
    w = weight.data.reshape(g, cout_g, taps)

    out = np.matmul(w[None], cols).reshape(batch, spec.out_ch, out_h, out_w)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    record_flops("conv", 2 * batch * spec.out_ch * taps * out_h * out_w)

    def vjp(grad):
        grad_g = grad.reshape(batch, g, cout_g, out_h * out_w)
        grad_w = np.matmul(grad_g, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(spec.weight_shape)
        grad_cols = np.matmul(np.swapaxes(w, -1, -2)[None], grad_g)
        grad_cols = grad_cols.reshape(batch, spec.in_ch, kh, kw, out_h, out_w)
        grad_pad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                r0, c0 = i * dh, j * dw
                grad_pad[:, :, r0:r0 + sh * (out_h - 1) + 1:sh, c0:c0 + sw * (out_w - 1) + 1:sw] += grad_cols[:, :, i, j]
        grad_x = grad_pad[:, :, top:top + height, left:left + width]
        grad_b = grad.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(out.astype(x.data.dtype), "conv2d", inputs, vjp)


def group_shuffle(x: Tensor, groups: int, axis: int = 1) -> Tensor:
    """
    Barajado de canales por grupos: reshape (g, C/g) → transpuesta → aplanar.

    El canal en la posición i·(C/g) + j pasa a la posición j·g + i.
    """
    axis %= x.ndim
    channels = x.shape[axis]
    if groups < 1 or channels % groups:
        raise ShapeError(f"C={channels} no es divisible entre g={groups}")
    if groups in (1, channels):
        return x
    shape = tuple(x.shape)
    split = shape[:axis] + (groups, channels // groups) + shape[axis + 1:]
    order = list(range(len(split)))
    order[axis], order[axis + 1] = order[axis + 1], order[axis]
    return reshape(transpose(reshape(x, split), order), shape)


def layer_norm(x: Tensor, axes, gamma: Tensor, beta: Tensor, eps=1e-5) -> Tensor:
    """
    Normaliza a media cero y varianza uno sobre `axes`, luego aplica γ·x̂ + β.

    gamma/beta tienen la forma de las dimensiones normalizadas.
    """
    axes = tuple(sorted(a % x.ndim for a in ((axes,) if isinstance(axes, int) else axes)))
    norm_shape = tuple(x.shape[a] for a in axes)
    if tuple(gamma.shape) != norm_shape or tuple(beta.shape) != norm_shape:
        raise ShapeError(f"gamma/beta deben tener forma {norm_shape}")
    affine_shape = tuple(x.shape[a] if a in axes else 1 for a in range(x.ndim))
    count = math.prod(norm_shape)

    data = x.data
    mean = data.mean(axis=axes, keepdims=True)
    centered = data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=axes, keepdims=True) + eps)
    x_hat = centered * inv_std
    g = gamma.data.reshape(affine_shape)
    out = x_hat * g + beta.data.reshape(affine_shape)
    other = tuple(a for a in range(x.ndim) if a not in axes)

    def vjp(grad):
        grad_gamma = (grad * x_hat).sum(axis=other).reshape(norm_shape) if other else (grad * x_hat).reshape(norm_shape)
        grad_beta = grad.sum(axis=other).reshape(norm_shape) if other else grad.reshape(norm_shape)
        grad_hat = grad * g
        sum_hat = grad_hat.sum(axis=axes, keepdims=True)
        sum_hat_x = (grad_hat * x_hat).sum(axis=axes, keepdims=True)
        grad_x = inv_std * (grad_hat - sum_hat / count - x_hat * sum_hat_x / count)
        return grad_x, grad_gamma, grad_beta

    return _record(out.astype(data.dtype), "layer_norm", (x, gamma, beta), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x·Wᵀ + b sobre el último eje; W tiene forma (Dout, Din)"""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: entrada {x.shape} incompatible con pesos {weight.shape}")
    out = matmul(x, transpose(weight, (1, 0)))
    return out + bias if bias is not None else out


def group_linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """
    Mapa lineal por grupos de canales (equivalente a una matriz diagonal por bloques).

    weight: (g, Dout/g, Din/g); el grupo k mapea los canales [k·Din/g, (k+1)·Din/g).
    """
    if weight.ndim != 3:
        raise ShapeError(f"group_linear espera pesos (g, Dout/g, Din/g), recibió {weight.shape}")
    groups, out_g, in_g = weight.shape
    d_in = x.shape[-1]
    if d_in % groups or d_in // groups != in_g:
        raise ShapeError(f"Din={d_in} no es compatible con {groups} grupos de {in_g}")
    lead = tuple(x.shape[:-1])
    rows = math.prod(lead)
    per_group = transpose(reshape(x, (rows, groups, in_g)), (1, 0, 2))
    out = matmul(per_group, transpose(weight, (0, 2, 1)))
    out = reshape(transpose(out, (1, 0, 2)), lead + (groups * out_g,))
    return out + bias if bias is not None else out


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool espera B×C×H×W, recibió {x.shape}")
    return reduce_mean(x, axis=(2, 3))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Entropía cruzada media del lote con log-sum-exp estable"""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} y etiquetas {labels.shape} incompatibles")
    if logits.shape[0] == 0:
        raise ShapeError("cross_entropy requiere un lote no vacío")
    classes = logits.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= classes:
        raise ContractError(f"etiquetas fuera de [0, {classes})")
    data = logits.data
    shifted = data - data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(labels))
    loss = -log_probs[rows, labels].mean()

    def vjp(grad):
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return (probs * (grad / len(labels)),)

    return _record(np.asarray(loss, dtype=data.dtype), "cross_entropy", (logits,), vjp)
