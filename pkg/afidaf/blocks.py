# afidaf/blocks.py
"""
Bloques de mezcla de tokens.

- m_i: filtro adaptativo en el dominio de la imagen (kernel grande
  descompuesto + barajado de grupos, con compuerta multiplicativa).
- m_c: máscara de canales en el dominio de Fourier.
- afidaf_block: alternancia m_i → m_c con residual.
- hafidaf_conv_block / hafidaf_mask_block: bloques jerárquicos con GSMLP.

Los parámetros se reciben como un ParamView (nombres relativos al bloque).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .ops import Conv2dSpec, conv2d, group_linear, group_shuffle, layer_norm
from .spectral import deinterleave, fft2, ifft2, interleave
from .tensor import DTYPES, Tensor, transpose
from .utils import ConfigError, ShapeError, log_warning

KINDS = ("afidaf", "idaf", "aff", "hafidaf_conv", "hafidaf_mask")

# Qué sub-filtros lleva cada variante del bloque alternado
_HAS_MI = {"afidaf": True, "idaf": True, "aff": False}
_HAS_MC = {"afidaf": True, "idaf": False, "aff": True}


# --- CONFIGURACIÓN ---
@dataclass(frozen=True)
class BlockConfig:
    kind: str = "afidaf"
    channels: int = 96
    dw_kernel: int = 5
    dwd_kernel: int = 7
    dwd_dilation: int = 3
    shuffle_groups: int = 4
    mask_groups: int = 8
    mlp_ratio: int = 2
    mlp_groups: int | None = None
    fconv_kernel: tuple = (3, 3)
    fconv_every: int = 2
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "fconv_kernel", tuple(self.fconv_kernel))
        if self.kind not in KINDS:
            raise ConfigError(f"tipo de bloque desconocido: {self.kind!r} (válidos: {', '.join(KINDS)})")
        if self.channels < 1 or self.mlp_ratio < 0 or self.fconv_every < 1:
            raise ConfigError(f"configuración de bloque inválida: {self}")
        c = self.channels
        if self.shuffle_groups < 1 or c % self.shuffle_groups:
            raise ShapeError(f"C={c} no es divisible entre shuffle_groups={self.shuffle_groups}")
        if self.mask_groups < 1 or c % self.mask_groups:
            raise ShapeError(f"C={c} no es divisible entre mask_groups={self.mask_groups}")
        g = self.mlp_group_count
        if self.mlp_ratio and (g < 1 or c % g):
            raise ShapeError(f"C={c} no es divisible entre mlp_groups={g}")

    @classmethod
    def fitted(cls, channels, **overrides):
        """Construye la configuración recortando los grupos para que dividan C"""
        cfg = dict(overrides)
        for key in ("shuffle_groups", "mask_groups", "mlp_groups"):
            default = cls.__dataclass_fields__[key].default
            value = cfg.get(key, default)
            if value is not None:
                cfg[key] = math.gcd(int(value), channels)
                if key in overrides and cfg[key] != int(value):
                    log_warning(f"{key}={value} no divide C={channels}; se usa {cfg[key]}")
        return cls(channels=channels, **cfg)

    @property
    def mlp_group_count(self):
        return self.shuffle_groups if self.mlp_groups is None else self.mlp_groups

    @property
    def receptive_field(self):
        return self.dw_kernel + (self.dwd_kernel - 1) * self.dwd_dilation

    def with_kind(self, kind):
        return replace(self, kind=kind)

    def to_dict(self):
        data = asdict(self)
        data["fconv_kernel"] = list(self.fconv_kernel)
        return data


# --- PARÁMETROS ---
@dataclass(frozen=True)
class ParamSpec:
    """Declaración de un parámetro: nombre, forma y regla de inicialización"""

    name: str
    shape: tuple
    init: str = "trunc_normal"  # trunc_normal | fan_in | zeros | ones

    def prefixed(self, prefix):
        return replace(self, name=f"{prefix}{self.name}")


class ParamView:
    """Vista de solo lectura sobre un mapa nombre → Tensor con un prefijo"""

    def __init__(self, params, prefix=""):
        self._params = params
        self._prefix = prefix

    def __getitem__(self, name):
        key = self._prefix + name
        try:
            return self._params[key]
        except KeyError:
            raise ConfigError(f"falta el parámetro {key!r}") from None

    def __contains__(self, name):
        return (self._prefix + name) in self._params

    def child(self, name):
        return ParamView(self._params, f"{self._prefix}{name}.")


def _conv_specs(name, spec: Conv2dSpec, init):
    specs = [ParamSpec(f"{name}.weight", spec.weight_shape, init)]
    if spec.bias:
        specs.append(ParamSpec(f"{name}.bias", (spec.out_ch,), "zeros"))
    return specs


def _norm_specs(name, channels):
    return [ParamSpec(f"{name}.gamma", (channels,), "ones"),
            ParamSpec(f"{name}.beta", (channels,), "zeros")]


def _group_linear_specs(name, d_in, d_out, groups):
    return [ParamSpec(f"{name}.weight", (groups, d_out // groups, d_in // groups)),
            ParamSpec(f"{name}.bias", (d_out,), "zeros")]


def _trunc_normal(rng, shape, std=0.02):
    values = rng.standard_normal(shape)
    outside = np.abs(values) > 2.0
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > 2.0
    return values * std


def initialize(specs, rng, dtype="f32"):
    """
    Inicializa en orden los parámetros declarados.

    trunc_normal: normal truncada en ±2σ con σ = 0.02; fan_in: normal con
    σ = 1/√fan_in (kernels espaciales); zeros/ones para bias y normas.
    """
    params = {}
    for spec in specs:
        if spec.init == "trunc_normal":
            values = _trunc_normal(rng, spec.shape)
        elif spec.init == "fan_in":
            fan_in = math.prod(spec.shape[1:])
            values = rng.standard_normal(spec.shape) / math.sqrt(fan_in)
        elif spec.init == "zeros":
            values = np.zeros(spec.shape)
        elif spec.init == "ones":
            values = np.ones(spec.shape)
        else:
            raise ConfigError(f"inicialización desconocida: {spec.init}")
        params[spec.name] = Tensor._wrap(values.astype(DTYPES[dtype]), check=False)
    return params


# --- GEOMETRÍAS ---
def _dw_spec(cfg):
    c = cfg.channels
    return Conv2dSpec.same(c, c, cfg.dw_kernel, groups=c)


def _dwd_spec(cfg):
    c = cfg.channels
    return Conv2dSpec.same(c, c, cfg.dwd_kernel, groups=c, dilation=cfg.dwd_dilation)


def _pointwise_spec(cfg):
    return Conv2dSpec(cfg.channels, cfg.channels, 1)


def _fconv_spec(cfg):
    c = cfg.channels
    return Conv2dSpec.same(2 * c, 2 * c, cfg.fconv_kernel, groups=c)


def attention_specs(cfg):
    return (_conv_specs("dw", _dw_spec(cfg), "fan_in")
            + _conv_specs("dwd", _dwd_spec(cfg), "fan_in")
            + _conv_specs("pw", _pointwise_spec(cfg), "trunc_normal"))


def m_i_specs(cfg):
    pw = _pointwise_spec(cfg)
    return (_conv_specs("proj_in", pw, "trunc_normal")
            + [s.prefixed("attn.") for s in attention_specs(cfg)]
            + _conv_specs("proj_out", pw, "trunc_normal"))


def mask_specs(cfg):
    c2 = 2 * cfg.channels
    return (_group_linear_specs("fc1", c2, c2, cfg.mask_groups)
            + _group_linear_specs("fc2", c2, c2, cfg.mask_groups))


def fconv_specs(cfg):
    return _conv_specs("fconv", _fconv_spec(cfg), "fan_in")


def gsmlp_specs(cfg):
    c, hidden, g = cfg.channels, cfg.mlp_ratio * cfg.channels, cfg.mlp_group_count
    return _group_linear_specs("fc1", c, hidden, g) + _group_linear_specs("fc2", hidden, c, g)


def uses_fconv(cfg, block_index):
    return cfg.kind == "hafidaf_conv" and block_index % cfg.fconv_every == cfg.fconv_every - 1


def block_param_specs(cfg: BlockConfig, block_index=0):
    """Parámetros de un bloque, en orden determinista y con nombres relativos"""
    c = cfg.channels
    specs = []
    if cfg.kind in _HAS_MI:
        if _HAS_MI[cfg.kind]:
            specs += _norm_specs("norm1", c) + [s.prefixed("mi.") for s in m_i_specs(cfg)]
        if _HAS_MC[cfg.kind]:
            specs += _norm_specs("norm2", c) + [s.prefixed("mc.") for s in mask_specs(cfg)]
        if cfg.mlp_ratio:
            specs += _norm_specs("norm3", c) + [s.prefixed("mlp.") for s in gsmlp_specs(cfg)]
        return specs

    specs += _norm_specs("norm1", c)
    if cfg.kind == "hafidaf_mask":
        specs += [s.prefixed("fmask.") for s in mask_specs(cfg)]
    elif uses_fconv(cfg, block_index):
        specs += fconv_specs(cfg)
    else:
        specs += [s.prefixed("attn.") for s in attention_specs(cfg)]
    if cfg.mlp_ratio:
        specs += _norm_specs("norm2", c) + [s.prefixed("mlp.") for s in gsmlp_specs(cfg)]
    return specs


# --- HELPERS ---
def _conv(x, spec, p, name):
    bias = p[f"{name}.bias"] if spec.bias else None
    return conv2d(x, spec, p[f"{name}.weight"], bias)


def channel_norm(x, p, name, eps=1e-5):
    """LayerNorm sobre el eje de canales de un tensor B×C×H×W"""
    return layer_norm(x, 1, p[f"{name}.gamma"], p[f"{name}.beta"], eps)


def _channels_last(x):
    return transpose(x, (0, 2, 3, 1))


def _channels_first(x):
    return transpose(x, (0, 3, 1, 2))


# --- FILTROS ---
def attention_conv(x: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """Conv1×1(GS(DWD-Conv(GS(DW-Conv(x))))), preserva la forma"""
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise ShapeError(f"attention_conv espera B×{cfg.channels}×H×W, recibió {x.shape}")
    y = _conv(x, _dw_spec(cfg), p, "dw")
    y = group_shuffle(y, cfg.shuffle_groups)
    y = _conv(y, _dwd_spec(cfg), p, "dwd")
    y = group_shuffle(y, cfg.shuffle_groups)
    return _conv(y, _pointwise_spec(cfg), p, "pw")


def m_i(x: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """Filtro del dominio de la imagen: compuerta attention_conv(u) ⊙ u con residual"""
    pw = _pointwise_spec(cfg)
    u = _conv(x, pw, p, "proj_in").gelu()
    gated = attention_conv(u, cfg, p.child("attn")) * u
    return _conv(gated, pw, p, "proj_out") + x


def channel_mask(t: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """
    Máscara B×2C×H×Wf calculada por bin a partir del vector de canales intercalado.

    La misma subred (group-linear → ReLU → group-linear) se aplica en cada
    bin de frecuencia, así que la máscara depende solo de ese vector.
    """
    h = _channels_last(t)
    h = group_linear(h, p["fc1.weight"], p["fc1.bias"]).relu()
    h = group_linear(h, p["fc2.weight"], p["fc2.bias"])
    return _channels_first(h)


def m_c(x: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """Máscara de canales en Fourier: ifft2(M(S) ⊙ S) con S = fft2(x)"""
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise ShapeError(f"m_c espera B×{cfg.channels}×H×W, recibió {x.shape}")
    spectrum = fft2(x)
    t = interleave(spectrum)
    masked = channel_mask(t, cfg, p) * t
    return ifft2(deinterleave(masked, spectrum.orig_width))


# F-Mask comparte implementación con m_c
f_mask = m_c


def f_conv(x: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """iFFT(Conv(FFT(x))): conv pequeña por canal sobre la malla de medio plano"""
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise ShapeError(f"f_conv espera B×{cfg.channels}×H×W, recibió {x.shape}")
    spectrum = fft2(x)
    filtered = _conv(interleave(spectrum), _fconv_spec(cfg), p, "fconv")
    return ifft2(deinterleave(filtered, spectrum.orig_width))


def gsmlp(x: Tensor, cfg: BlockConfig, p: ParamView, residual=True) -> Tensor:
    """GroupLinear(C→rC) → GELU → group_shuffle → GroupLinear(rC→C) por posición"""
    if cfg.mlp_ratio < 1:
        raise ConfigError("gsmlp requiere mlp_ratio ≥ 1")
    h = _channels_last(x)
    h = group_linear(h, p["fc1.weight"], p["fc1.bias"]).gelu()
    h = group_shuffle(h, cfg.mlp_group_count, axis=-1)
    h = _channels_first(group_linear(h, p["fc2.weight"], p["fc2.bias"]))
    return h + x if residual else h


# --- BLOQUES ---
def afidaf_block(x: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """
    y = x + m_c(LN(m_i(LN(x)))) [+ GSMLP con pre-norm y residual].

    kind=idaf omite m_c y kind=aff omite m_i.
    """
    if cfg.kind not in _HAS_MI:
        raise ConfigError(f"afidaf_block no acepta kind={cfg.kind}")
    z = x
    if _HAS_MI[cfg.kind]:
        z = m_i(channel_norm(z, p, "norm1", cfg.norm_eps), cfg, p.child("mi"))
    if _HAS_MC[cfg.kind]:
        z = m_c(channel_norm(z, p, "norm2", cfg.norm_eps), cfg, p.child("mc"))
    h = x + z
    if cfg.mlp_ratio:
        h = h + gsmlp(channel_norm(h, p, "norm3", cfg.norm_eps), cfg, p.child("mlp"), residual=False)
    return h


def _hafidaf_tail(h, cfg, p):
    if not cfg.mlp_ratio:
        return h
    return h + gsmlp(channel_norm(h, p, "norm2", cfg.norm_eps), cfg, p.child("mlp"), residual=False)


def hafidaf_conv_block(x: Tensor, cfg: BlockConfig, p: ParamView, block_index=0) -> Tensor:
    """LN → (attention_conv | f_conv según block_index) → residual → LN → GSMLP → residual"""
    normed = channel_norm(x, p, "norm1", cfg.norm_eps)
    if uses_fconv(cfg, block_index):
        mixed = f_conv(normed, cfg, p)
    else:
        mixed = attention_conv(normed, cfg, p.child("attn"))
    return _hafidaf_tail(x + mixed, cfg, p)


def hafidaf_mask_block(x: Tensor, cfg: BlockConfig, p: ParamView) -> Tensor:
    """LN → f_mask → residual → LN → GSMLP → residual"""
    mixed = f_mask(channel_norm(x, p, "norm1", cfg.norm_eps), cfg, p.child("fmask"))
    return _hafidaf_tail(x + mixed, cfg, p)


def block_forward(x: Tensor, cfg: BlockConfig, p: ParamView, block_index=0) -> Tensor:
    if cfg.kind == "hafidaf_conv":
        return hafidaf_conv_block(x, cfg, p, block_index)
    if cfg.kind == "hafidaf_mask":
        return hafidaf_mask_block(x, cfg, p)
    return afidaf_block(x, cfg, p)
