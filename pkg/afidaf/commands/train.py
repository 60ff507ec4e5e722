# afidaf/commands/train.py
import json
import os
from dataclasses import replace

import click

from ..config import Config
from ..models import ModelConfig, build, forward_eval, top_k_accuracy
from ..train import DEFAULT_DATA, RunConfig, SyntheticDataset, train_loop
from ..weights import load_weights, restore
from ..utils import ConfigError, log_info
from . import handle_errors

DEFAULT_RUN = os.path.join(Config.CONFIG_DIR, "train-narrow.json")


# --- ENTRENAR ---
@click.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=DEFAULT_RUN,
              show_default="train-narrow.json empaquetado",
              help="Archivo de corrida (model/train/data) o configuración de modelo.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Carpeta de salida (por defecto AFIDAF_OUT_DIR).")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Semilla (modelo y orden de lotes).")
@click.option("--epochs", type=click.IntRange(min=1), default=None, help="Sobrescribe train.epochs.")
@click.option("--batch-size", type=click.IntRange(min=1), default=None, help="Sobrescribe train.batch_size.")
@click.option("--data", "data_spec", default=None, help="Fuente de datos, p. ej. " + DEFAULT_DATA)
@click.option("--dtype", type=click.Choice(["f32", "f64"]), default=None,
              help="Precisión de los pesos (por defecto AFIDAF_DTYPE).")
@click.option("--freeze", is_flag=True, help="No actualizar pesos (control sin aprendizaje).")
@handle_errors
def train_cmd(config_path, out_dir, seed, epochs, batch_size, data_spec, dtype, freeze):
    """Entrena un modelo sobre datos sintéticos y guarda pesos y métricas."""
    run = RunConfig.load(config_path)
    overrides = {key: value for key, value in
                 (("seed", seed), ("epochs", epochs), ("batch_size", batch_size)) if value is not None}
    if freeze:
        overrides["freeze"] = True
    cfg = replace(run.train, **overrides)
    dataset = SyntheticDataset.from_spec(data_spec or run.data)
    out_dir = out_dir or os.path.join(Config.OUT_DIR, f"{run.model.variant}-seed{cfg.seed}")

    model = build(run.model, seed=cfg.seed, dtype=dtype)
    history = train_loop(model, dataset, cfg, out_dir=out_dir)
    click.echo(f"Pasos: {len(history.steps)}   loss final: {history.steps[-1]['loss']:.4f}")
    click.echo(f"Precisión de entrenamiento: {history.final_accuracy:.4f}")
    click.echo(f"Artefactos en: {out_dir}")


# --- EVALUAR ---
def _data_from_summary(weights_path):
    path = os.path.join(os.path.dirname(os.path.abspath(weights_path)), Config.SUMMARY_FILENAME)
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as f:
        return json.load(f).get("data")


@click.command("eval")
@click.option("--weights", "weights_path", type=click.Path(dir_okay=False), required=True,
              help="Archivo .afwt a evaluar.")
@click.option("--data", "data_spec", default=None,
              help="Fuente de datos (por defecto la registrada en summary.json o " + DEFAULT_DATA + ").")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Configuración del modelo (por defecto model.json junto a los pesos).")
@click.option("--top-k", type=click.IntRange(min=1), default=1, show_default=True, help="k de la precisión top-k.")
@handle_errors
def eval_cmd(weights_path, data_spec, config_path, top_k):
    """Evalúa pesos guardados y reporta la precisión top-k."""
    if config_path is None:
        config_path = os.path.join(os.path.dirname(os.path.abspath(weights_path)), Config.MODEL_FILENAME)
        if not os.path.exists(config_path):
            raise ConfigError(f"no se encontró {Config.MODEL_FILENAME} junto a los pesos; use --config")
    config = ModelConfig.load(config_path)
    model = restore(config, load_weights(weights_path))
    dataset = SyntheticDataset.from_spec(data_spec or _data_from_summary(weights_path) or DEFAULT_DATA)
    logits = forward_eval(model, dataset.images)
    accuracy = top_k_accuracy(logits, dataset.labels, top_k)
    log_info(f"Evaluación de {weights_path}: top-{top_k} = {accuracy:.4f}")
    click.echo(f"Muestras: {len(dataset)}")
    click.echo(f"Precisión top-{top_k}: {accuracy:.4f}")
