# afidaf/train.py
"""Entrenamiento a escala de escritorio: AdamW + coseno + entropía cruzada sobre datos sintéticos."""
from __future__ import annotations

import csv
import json
import math
import os
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import Config
from .models import Model, ModelConfig, forward_eval, top_k_accuracy
from .ops import softmax_cross_entropy
from .tensor import DTYPES, Tape, Tensor, backward
from .utils import ConfigError, ContractError, NumericError, TrainingDivergedError, log_error, log_info
from .weights import save_weights

# Parámetros sin weight decay (por nombre de hoja)
NO_DECAY = ("bias", "gamma", "beta")

DEFAULT_DATA = "synthetic:classes=4,size=32,per_class=64,seed=0,mode=mixed"


# --- CONFIGURACIÓN ---
@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 2e-3
    min_lr: float = 2e-4
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 25
    batch_size: int = 64
    seed: int = 0
    freeze: bool = False

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not 0 < self.min_lr <= self.base_lr:
            raise ConfigError(f"se requiere 0 < min_lr ≤ base_lr (min_lr={self.min_lr}, base_lr={self.base_lr})")
        if self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError("weight_decay debe ser ≥ 0 y eps > 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"betas inválidas: {self.betas}")
        if self.epochs < 1 or self.batch_size < 1 or self.seed < 0:
            raise ConfigError("epochs, batch_size deben ser positivos y seed ≥ 0")

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"configuración de entrenamiento inválida: {e}") from e

    def to_dict(self):
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data


def cosine_lr(step, total, cfg: TrainConfig) -> float:
    """lr = min + ½·(base − min)·(1 + cos(π·step/total))"""
    if step < 0 or step > total:
        raise ContractError(f"step={step} fuera de [0, {total}]")
    if total == 0:
        return cfg.base_lr
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * step / total))


# --- OPTIMIZADOR ---
@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, params):
        return cls(0, {n: np.zeros(t.shape, t.data.dtype) for n, t in params.items()},
                   {n: np.zeros(t.shape, t.data.dtype) for n, t in params.items()})


def decays(name):
    return name.rsplit(".", 1)[-1] not in NO_DECAY


def adamw_step(params, grads, state: AdamWState, lr, cfg: TrainConfig):
    """
    Un paso de AdamW con decaimiento desacoplado y momentos con corrección de sesgo.

    Modifica `params` (ParamStore) y `state` en su lugar y los devuelve.
    """
    beta1, beta2 = cfg.betas
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, current in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != current.shape:
            raise ContractError(f"{name}: gradiente {g.shape} != parámetro {current.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradiente no finito en el parámetro {name}")
        p = current.data.copy()
        if decays(name):
            p *= 1.0 - lr * cfg.weight_decay
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
        params.replace(name, Tensor._wrap(p.astype(current.data.dtype), op=name))
    return params, state


# --- DATOS SINTÉTICOS ---
DATA_MODES = ("mixed", "texture", "frequency")


@dataclass
class SyntheticDataset:
    """
    Clasificación sintética de imágenes 3×S×S.

    La clase k combina ruido limitado a la banda radial k (señal global) y
    un parche local de rayas con orientación propia de la clase (señal local).
    mode='texture' cambia el ruido por ruido blanco común a todas las clases
    y mode='frequency' omite el parche.
    """

    num_classes: int = 4
    image_size: int = 32
    samples_per_class: int = 64
    seed: int = 0
    mode: str = "mixed"
    patch: int = 8
    images: np.ndarray = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in DATA_MODES:
            raise ConfigError(f"modo de datos desconocido: {self.mode} (válidos: {', '.join(DATA_MODES)})")
        if self.num_classes < 2 or self.samples_per_class < 1 or self.image_size < 2 * self.patch:
            raise ConfigError(f"dataset sintético inválido: {self}")
        self.images, self.labels = self._generate()

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return (3, self.image_size, self.image_size)

    @property
    def spec(self):
        return (f"synthetic:classes={self.num_classes},size={self.image_size},"
                f"per_class={self.samples_per_class},seed={self.seed},mode={self.mode},patch={self.patch}")

    @classmethod
    def from_spec(cls, spec: str):
        """Parsea 'synthetic:classes=4,size=32,per_class=64,seed=0,mode=mixed'"""
        kind, _, options = spec.partition(":")
        if kind != "synthetic":
            raise ConfigError(f"fuente de datos desconocida: {kind!r}")
        keys = {"classes": ("num_classes", int), "size": ("image_size", int),
                "per_class": ("samples_per_class", int), "seed": ("seed", int),
                "mode": ("mode", str), "patch": ("patch", int)}
        kwargs = {}
        for item in filter(None, options.split(",")):
            key, sep, value = item.partition("=")
            if not sep or key.strip() not in keys:
                raise ConfigError(f"opción de datos inválida: {item!r}")
            attr, cast = keys[key.strip()]
            try:
                kwargs[attr] = cast(value.strip())
            except ValueError as e:
                raise ConfigError(f"valor inválido para {key}: {value!r}") from e
        return cls(**kwargs)

    def _band_noise(self, rng, band):
        size = self.image_size
        fy = np.fft.fftfreq(size)[:, None]
        fx = np.fft.rfftfreq(size)[None, :]
        radius = np.sqrt(fy ** 2 + fx ** 2)
        edges = np.linspace(0.05, 0.5, self.num_classes + 1)
        band_mask = (radius >= edges[band]) & (radius < edges[band + 1])
        phases = rng.uniform(0, 2 * np.pi, band_mask.shape)
        plane = np.fft.irfft2(band_mask * np.exp(1j * phases), s=(size, size))
        return plane / (plane.std() + 1e-12)

    def _stripes(self, label):
        angle = np.pi * label / self.num_classes
        yy, xx = np.mgrid[: self.patch, : self.patch]
        return np.sign(np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / 4.0 + 0.5))

    def _generate(self):
        rng = np.random.default_rng(self.seed)
        size, count = self.image_size, self.num_classes * self.samples_per_class
        labels = np.repeat(np.arange(self.num_classes), self.samples_per_class)
        labels = labels[rng.permutation(count)]
        images = np.empty((count, 3) + (size, size))
        for i, label in enumerate(labels):
            if self.mode == "texture":
                base = rng.standard_normal((size, size))
            else:
                base = self._band_noise(rng, label)
            if self.mode != "frequency":
                r, c = rng.integers(0, size - self.patch + 1, size=2)
                base[r:r + self.patch, c:c + self.patch] += 2.0 * self._stripes(label)
            gains = 1.0 + 0.1 * rng.standard_normal(3)
            images[i] = gains[:, None, None] * base + 0.05 * rng.standard_normal((3, size, size))
        return images, labels


# --- CONFIGURACIÓN DE CORRIDA ---
@dataclass(frozen=True)
class RunConfig:
    """Archivo de corrida: modelo + entrenamiento + datos"""

    model: ModelConfig
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = DEFAULT_DATA

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON inválido en {path}: {e}") from e
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: se esperaba un objeto JSON")
        if "variant" in data:
            return cls(ModelConfig.from_dict(data))
        model = data.get("model")
        if model is None:
            raise ConfigError(f"{path}: falta la sección 'model'")
        model = ModelConfig.preset(model) if isinstance(model, str) else ModelConfig.from_dict(model)
        return cls(model, TrainConfig.from_dict(data.get("train", {})), data.get("data", DEFAULT_DATA))


# --- BUCLE ---
@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)    # dicts step/lr/loss/acc
    epochs: list = field(default_factory=list)   # dicts epoch/loss/acc
    final_accuracy: float | None = None

    @property
    def losses(self):
        return [row["loss"] for row in self.steps]

    @property
    def learning_rates(self):
        return [row["lr"] for row in self.steps]


def smoothed(values, window=20):
    """Media móvil sobre ventanas completas"""
    values = np.asarray(values, dtype=float)
    if len(values) < window:
        return values
    return np.convolve(values, np.ones(window) / window, mode="valid")


def total_steps(dataset_size, cfg: TrainConfig):
    return cfg.epochs * math.ceil(dataset_size / cfg.batch_size)


def train_loop(model: Model, dataset: SyntheticDataset, cfg: TrainConfig, out_dir=None) -> TrainHistory:
    """
    Entrena `model` en su lugar. Determinista dado cfg.seed.

    Si out_dir no es None escribe weights.afwt, model.json, metrics.csv y summary.json.
    """
    if dataset.input_shape != model.config.input:
        raise ConfigError(f"el dataset produce {dataset.input_shape} y el modelo espera {model.config.input}")
    if dataset.num_classes > model.config.num_classes:
        raise ConfigError(f"el dataset tiene {dataset.num_classes} clases y el modelo {model.config.num_classes}")

    dtype = DTYPES[model.dtype]
    images, labels = dataset.images.astype(dtype), dataset.labels
    total = total_steps(len(dataset), cfg)
    rng = np.random.default_rng(cfg.seed)
    state = AdamWState.zeros(model.params)
    history = TrainHistory()
    step = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss, epoch_hits = 0.0, 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lr = cosine_lr(step, total, cfg)
            try:
                tape = Tape()
                watched = {name: tape.watch(t) for name, t in model.params.items()}
                logits = model.forward(Tensor._wrap(images[idx], op="batch"), watched)
                loss = softmax_cross_entropy(logits, labels[idx])
                if not cfg.freeze:
                    grads = backward(loss)
                    adamw_step(model.params, {n: grads[w] for n, w in watched.items()}, state, lr, cfg)
            except NumericError as e:
                log_error(f"Entrenamiento divergió en el paso {step}", e)
                raise TrainingDivergedError(f"la pérdida divergió en el paso {step} (época {epoch + 1}): {e}") from e
            loss_value = loss.item()
            acc = top_k_accuracy(logits, labels[idx])
            history.steps.append({"step": step, "lr": lr, "loss": loss_value, "acc": acc})
            epoch_loss += loss_value * len(idx)
            epoch_hits += acc * len(idx)
            step += 1
        row = {"epoch": epoch + 1, "loss": epoch_loss / len(order), "acc": epoch_hits / len(order)}
        history.epochs.append(row)
        log_info(f"Época {row['epoch']}/{cfg.epochs}: loss={row['loss']:.4f} acc={row['acc']:.3f} lr={lr:.2e}")

    history.final_accuracy = top_k_accuracy(forward_eval(model, images), labels)
    log_info(f"Precisión final de entrenamiento: {history.final_accuracy:.4f}")
    if out_dir is not None:
        write_run(out_dir, model, history, cfg, dataset)
    return history


def write_run(out_dir, model, history, cfg, dataset):
    os.makedirs(out_dir, exist_ok=True)
    save_weights(model.params, os.path.join(out_dir, Config.WEIGHTS_FILENAME))
    model.config.save(os.path.join(out_dir, Config.MODEL_FILENAME))
    with open(os.path.join(out_dir, Config.METRICS_FILENAME), "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "lr", "loss", "acc"])
        writer.writeheader()
        writer.writerows(history.steps)
    summary = {
        "variant": model.config.variant,
        "seed": cfg.seed,
        "steps": len(history.steps),
        "final_loss": history.steps[-1]["loss"] if history.steps else None,
        "final_accuracy": history.final_accuracy,
        "params": model.params.total,
        "checksum": model.params.checksum(),
        "train": cfg.to_dict(),
        "data": dataset.spec,
    }
    with open(os.path.join(out_dir, Config.SUMMARY_FILENAME), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    log_info(f"Artefactos de entrenamiento escritos en {out_dir}")
