# afidaf/models.py
"""
Arquitecturas completas: AFIDAF-T, AFIDAF, IDAF, AFF, HAFIDAF y la variante
estrecha para aprendizaje de escritorio.

La configuración de un modelo es un documento JSON (ver README.md); los
presets viven en afidaf/configs/.
"""
from __future__ import annotations

import hashlib
import json
import os
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockConfig, ParamSpec, ParamView, block_forward, block_param_specs, initialize
from .config import Config
from .ops import Conv2dSpec, conv2d, global_avg_pool, layer_norm, linear
from .tensor import DTYPES, Tensor
from .utils import ConfigError, ContractError, FlopCounter, ShapeError, log_info

STEM_STYLES = ("conv", "patch")
DOWNSAMPLE_STYLES = ("dwconv", "merge")


# --- CONFIGURACIÓN ---
@dataclass(frozen=True)
class StemLayer:
    channels: int
    kernel: int = 3
    stride: int = 1


@dataclass(frozen=True)
class StageConfig:
    blocks: int
    channels: int
    kind: str = "afidaf"
    downsample: bool = True


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    input: tuple = (3, 256, 256)
    stem: tuple = ()
    stages: tuple = ()
    num_classes: int = 1000
    stem_style: str = "conv"
    downsample_style: str = "dwconv"
    head_expansion: int = 0
    block: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(self.input))
        object.__setattr__(self, "stem", tuple(self.stem))
        object.__setattr__(self, "stages", tuple(self.stages))
        self.validate()

    # --- validación ---
    def validate(self):
        if len(self.input) != 3 or min(self.input) < 1:
            raise ConfigError(f"input debe ser (C, H, W) positivo, recibió {self.input}")
        if not self.stem:
            raise ConfigError("el stem necesita al menos una capa")
        if not self.stages:
            raise ConfigError("el modelo necesita al menos una etapa")
        if self.stem_style not in STEM_STYLES:
            raise ConfigError(f"stem_style inválido: {self.stem_style}")
        if self.downsample_style not in DOWNSAMPLE_STYLES:
            raise ConfigError(f"downsample_style inválido: {self.downsample_style}")
        if self.stem_style == "patch" and len(self.stem) != 1:
            raise ConfigError("el stem 'patch' usa exactamente una capa")
        if self.num_classes < 1 or self.head_expansion < 0:
            raise ConfigError("num_classes debe ser ≥ 1 y head_expansion ≥ 0")

        channels = self.stem[-1].channels
        for i, stage in enumerate(self.stages):
            if stage.blocks < 1:
                raise ConfigError(f"la etapa {i} no tiene bloques")
            if not stage.downsample and stage.channels != channels:
                raise ConfigError(
                    f"la etapa {i} cambia de {channels} a {stage.channels} canales sin downsample")
            try:
                self.block_config(stage)
            except ShapeError as e:
                raise ConfigError(f"etapa {i}: {e}") from e
            channels = stage.channels

        height, width = self.input[1:]
        for name, (h, w) in self.resolutions():
            if h < 1 or w < 1:
                raise ConfigError(f"la entrada {height}×{width} es muy pequeña: {name} quedaría en {h}×{w}")

    def block_config(self, stage: StageConfig) -> BlockConfig:
        return BlockConfig.fitted(stage.channels, kind=stage.kind, **self.block)

    # --- geometría ---
    def stem_specs(self):
        specs, channels = [], self.input[0]
        for layer in self.stem:
            if self.stem_style == "patch":
                spec = Conv2dSpec(channels, layer.channels, layer.kernel, stride=layer.stride)
            else:
                spec = Conv2dSpec.same(channels, layer.channels, layer.kernel, stride=layer.stride)
            specs.append(spec)
            channels = layer.channels
        return specs

    def downsample_specs(self, in_ch, out_ch):
        """Geometrías (espacial, proyección) del paso de reducción entre etapas"""
        if self.downsample_style == "merge":
            return None, Conv2dSpec(in_ch, out_ch, 2, stride=2)
        return Conv2dSpec.same(in_ch, in_ch, 3, groups=in_ch, stride=2), Conv2dSpec(in_ch, out_ch, 1)

    def resolutions(self):
        """Resolución espacial a la salida del stem y de cada etapa"""
        h, w = self.input[1:]
        for spec in self.stem_specs():
            h, w = spec.output_size(h, w)
        out = [("stem", (h, w))]
        channels = self.stem[-1].channels
        for i, stage in enumerate(self.stages):
            if stage.downsample:
                spatial, proj = self.downsample_specs(channels, stage.channels)
                if spatial is not None:
                    h, w = spatial.output_size(h, w)
                h, w = proj.output_size(h, w)
            out.append((f"stage{i + 1}", (h, w)))
            channels = stage.channels
        return out

    @property
    def feature_channels(self):
        return self.stages[-1].channels * (self.head_expansion or 1)

    # --- serialización ---
    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, Mapping):
            raise ConfigError("la configuración del modelo debe ser un objeto JSON")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"claves desconocidas en la configuración: {sorted(unknown)}")
        if "variant" not in data:
            raise ConfigError("falta la clave 'variant'")
        try:
            values = dict(data)
            values["stem"] = tuple(StemLayer(**layer) for layer in data.get("stem", ()))
            values["stages"] = tuple(StageConfig(**stage) for stage in data.get("stages", ()))
            values["block"] = dict(data.get("block", {}))
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"configuración de modelo inválida: {e}") from e

    def to_dict(self):
        return {
            "variant": self.variant,
            "input": list(self.input),
            "stem": [vars(layer).copy() for layer in self.stem],
            "stem_style": self.stem_style,
            "stages": [vars(stage).copy() for stage in self.stages],
            "num_classes": self.num_classes,
            "downsample_style": self.downsample_style,
            "head_expansion": self.head_expansion,
            "block": dict(self.block),
        }

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON inválido en {path}: {e}") from e
        # Un archivo de corrida (train-*.json) trae el modelo en la sección "model"
        if isinstance(data, Mapping) and "model" in data and "variant" not in data:
            data = data["model"]
            if isinstance(data, str):
                return cls.preset(data)
        return cls.from_dict(data)

    @classmethod
    def preset(cls, name):
        path = os.path.join(Config.CONFIG_DIR, f"{name}.json")
        if name not in available_presets():
            raise ConfigError(f"variante desconocida: {name!r} (disponibles: {', '.join(available_presets())})")
        return cls.load(path)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def available_presets():
    names = [f[:-5] for f in os.listdir(Config.CONFIG_DIR) if f.endswith(".json")]
    return sorted(n for n in names if not n.startswith("train-"))


# --- PARÁMETROS ---
class ParamStore(Mapping):
    """Colección ordenada nombre → Tensor; el orden de inserción es el de iteración"""

    def __init__(self, items=()):
        self._tensors = {}
        for name, value in (items.items() if isinstance(items, Mapping) else items):
            self.add(name, value)

    def add(self, name, value: Tensor):
        if name in self._tensors:
            raise ContractError(f"parámetro duplicado: {name}")
        self._tensors[name] = value

    def replace(self, name, value: Tensor):
        current = self._tensors[name]
        if current.shape != value.shape:
            raise ShapeError(f"{name}: forma {value.shape} != {current.shape}")
        self._tensors[name] = value

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    @property
    def total(self):
        return sum(t.size for t in self._tensors.values())

    def checksum(self):
        """SHA-256 de nombres, formas, dtypes y bytes, en orden"""
        digest = hashlib.sha256()
        for name, t in self._tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(repr((t.shape, t.dtype)).encode("ascii"))
            digest.update(np.ascontiguousarray(t.data).tobytes())
        return digest.hexdigest()


def model_param_specs(config: ModelConfig):
    """Declaración completa de parámetros del modelo en orden de ejecución"""
    specs = []
    for i, spec in enumerate(config.stem_specs()):
        specs += [ParamSpec(f"stem.{i}.weight", spec.weight_shape, "fan_in"),
                  ParamSpec(f"stem.{i}.bias", (spec.out_ch,), "zeros")]
    if config.stem_style == "patch":
        width = config.stem[-1].channels
        specs += [ParamSpec("stem.norm.gamma", (width,), "ones"), ParamSpec("stem.norm.beta", (width,), "zeros")]

    channels = config.stem[-1].channels
    for i, stage in enumerate(config.stages):
        prefix = f"stages.{i}."
        if stage.downsample:
            spatial, proj = config.downsample_specs(channels, stage.channels)
            if spatial is None:
                specs += [ParamSpec(f"{prefix}down.norm.gamma", (channels,), "ones"),
                          ParamSpec(f"{prefix}down.norm.beta", (channels,), "zeros"),
                          ParamSpec(f"{prefix}down.proj.weight", proj.weight_shape, "fan_in")]
            else:
                specs += [ParamSpec(f"{prefix}down.dw.weight", spatial.weight_shape, "fan_in"),
                          ParamSpec(f"{prefix}down.dw.bias", (channels,), "zeros"),
                          ParamSpec(f"{prefix}down.proj.weight", proj.weight_shape)]
            specs.append(ParamSpec(f"{prefix}down.proj.bias", (stage.channels,), "zeros"))
        cfg = config.block_config(stage)
        for j in range(stage.blocks):
            specs += [s.prefixed(f"{prefix}blocks.{j}.") for s in block_param_specs(cfg, j)]
        channels = stage.channels

    if config.head_expansion:
        specs += [ParamSpec("head.expand.weight", (config.feature_channels, channels, 1, 1)),
                  ParamSpec("head.expand.bias", (config.feature_channels,), "zeros")]
    features = config.feature_channels
    specs += [ParamSpec("head.norm.gamma", (features,), "ones"),
              ParamSpec("head.norm.beta", (features,), "zeros"),
              ParamSpec("head.fc.weight", (config.num_classes, features)),
              ParamSpec("head.fc.bias", (config.num_classes,), "zeros")]
    return specs


# --- MODELO ---
class Model:
    """ParamStore + función forward; inmutable salvo por el entrenamiento"""

    def __init__(self, config: ModelConfig, params: ParamStore):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def __call__(self, x, params=None, trace=None):
        return self.forward(x, params, trace)

    def forward(self, x: Tensor, params=None, trace=None) -> Tensor:
        """
        (B, C, H, W) → (B, num_classes).

        `params` permite sustituir los tensores (p. ej. vistas en una cinta);
        si se pasa una lista en `trace` se le agregan (etapa, forma).
        """
        config = self.config
        p = ParamView(self.params if params is None else params)
        if x.ndim != 4 or tuple(x.shape[1:]) != config.input:
            raise ShapeError(f"el modelo espera B×{'×'.join(map(str, config.input))}, recibió {x.shape}")

        for i, spec in enumerate(config.stem_specs()):
            x = conv2d(x, spec, p[f"stem.{i}.weight"], p[f"stem.{i}.bias"])
            if config.stem_style == "conv":
                x = x.gelu()
        if config.stem_style == "patch":
            x = layer_norm(x, 1, p["stem.norm.gamma"], p["stem.norm.beta"])
        _trace(trace, "stem", x)

        channels = config.stem[-1].channels
        for i, stage in enumerate(config.stages):
            sp = p.child(f"stages.{i}")
            if stage.downsample:
                x = self._downsample(x, channels, stage.channels, sp.child("down"))
            cfg = config.block_config(stage)
            for j in range(stage.blocks):
                x = block_forward(x, cfg, sp.child(f"blocks.{j}"), j)
            _trace(trace, f"stage{i + 1}", x)
            channels = stage.channels

        if config.head_expansion:
            expand = Conv2dSpec(channels, config.feature_channels, 1)
            x = conv2d(x, expand, p["head.expand.weight"], p["head.expand.bias"]).gelu()
        x = global_avg_pool(x)
        x = layer_norm(x, -1, p["head.norm.gamma"], p["head.norm.beta"])
        logits = linear(x, p["head.fc.weight"], p["head.fc.bias"])
        _trace(trace, "head", logits)
        return logits

    def _downsample(self, x, in_ch, out_ch, p):
        spatial, proj = self.config.downsample_specs(in_ch, out_ch)
        if spatial is None:
            x = layer_norm(x, 1, p["norm.gamma"], p["norm.beta"])
        else:
            x = conv2d(x, spatial, p["dw.weight"], p["dw.bias"])
        return conv2d(x, proj, p["proj.weight"], p["proj.bias"])


def _trace(trace, name, x):
    if trace is not None:
        trace.append((name, tuple(x.shape)))


def build(config: ModelConfig, seed=0, dtype=None) -> Model:
    """Inicializa un modelo de forma determinista a partir de la semilla"""
    dtype = dtype or Config.DEFAULT_DTYPE
    if dtype not in DTYPES:
        raise ConfigError(f"dtype no soportado: {dtype}")
    rng = np.random.default_rng(seed)
    params = initialize(model_param_specs(config), rng, dtype)
    model = Model(config, ParamStore(params))
    log_info(f"Modelo {config.variant} construido: {count_params(model):,} parámetros ({dtype})")
    return model


# --- CONTEOS ---
def count_params(model: Model) -> int:
    return model.params.total


def params_by_section(model: Model):
    """Parámetros agrupados en stem / stageN / head, en orden"""
    sections = {}
    for name, t in model.params.items():
        head, _, rest = name.partition(".")
        key = f"stage{int(rest.split('.')[0]) + 1}" if head == "stages" else head
        sections[key] = sections.get(key, 0) + t.size
    return sections


def flop_breakdown(model: Model, input_shape=None, trace=None):
    """FLOPs por categoría (conv / matmul / fft) para una imagen"""
    input_shape = tuple(input_shape or model.config.input)
    if input_shape != model.config.input:
        # Otra resolución: mismos pesos con la entrada ajustada
        data = model.config.to_dict()
        data["input"] = list(input_shape)
        model = Model(ModelConfig.from_dict(data), model.params)
    x = Tensor._wrap(np.zeros((1,) + input_shape, dtype=DTYPES[model.dtype]), check=False)
    with FlopCounter() as counter:
        model.forward(x, trace=trace)
    return dict(counter.by_category)


def count_flops(model: Model, input_shape=None) -> int:
    """
    FLOPs de un forward con lote 1.

    conv/linear: 2·MACs; FFT: 5·HW·log2(HW) por plano y por dirección.
    """
    return int(sum(flop_breakdown(model, input_shape).values()))


# --- EVALUACIÓN ---
def forward_eval(model: Model, batch, chunk_size=64) -> Tensor:
    """Logits sin cinta, procesando el lote en trozos de `chunk_size`"""
    data = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    if data.ndim != 4 or tuple(data.shape[1:]) != model.config.input:
        raise ShapeError(f"el lote {data.shape} no coincide con la entrada {model.config.input}")
    data = data.astype(DTYPES[model.dtype], copy=False)
    outputs = []
    for start in range(0, len(data), chunk_size):
        chunk = Tensor._wrap(np.ascontiguousarray(data[start:start + chunk_size]), op="forward_eval")
        outputs.append(model.forward(chunk).data)
    return Tensor._wrap(np.concatenate(outputs, axis=0), check=False)


def top_k_accuracy(logits, labels, k=1) -> float:
    """Fracción de muestras cuya clase verdadera está entre las k mayores (empates → índice menor)"""
    scores = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels)
    if scores.ndim != 2 or labels.shape != (scores.shape[0],):
        raise ShapeError(f"logits {scores.shape} y etiquetas {labels.shape} incompatibles")
    if not 1 <= k <= scores.shape[1]:
        raise ContractError(f"k={k} fuera de [1, {scores.shape[1]}]")
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())
