# afidaf/commands/summarize.py
import click

from ..models import ModelConfig, available_presets, build, flop_breakdown, params_by_section
from ..utils import ConfigError
from . import handle_errors


def _millions(n):
    return f"{n / 1e6:.2f}M"


@click.command("summarize")
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="Archivo JSON con la configuración del modelo.")
@click.option("--variant", help="Preset empaquetado: " + ", ".join(available_presets()) + ".")
@click.option("--seed", default=0, show_default=True, help="Semilla de inicialización.")
@click.option("--flops/--no-flops", default=True, show_default=True,
              help="Ejecutar un forward para contar FLOPs y formas por etapa.")
@handle_errors
def summarize_cmd(config_path, variant, seed, flops):
    """Imprime formas por etapa, total de parámetros y de FLOPs de un modelo."""
    if bool(config_path) == bool(variant):
        raise ConfigError("indique exactamente una de --config o --variant")
    config = ModelConfig.load(config_path) if config_path else ModelConfig.preset(variant)
    model = build(config, seed=seed, dtype="f32")

    click.echo(f"Modelo: {config.variant}   entrada: {'×'.join(map(str, config.input))}")
    sections = params_by_section(model)
    if flops:
        trace = []
        breakdown = flop_breakdown(model, trace=trace)
        shapes = {name: "×".join(map(str, shape[1:])) for name, shape in trace}
    else:
        breakdown = {}
        shapes = {name: f"{h}×{w}" for name, (h, w) in config.resolutions()}
    click.echo(f"{'sección':<10}{'forma de salida':<24}{'parámetros':>14}")
    for name, count in sections.items():
        click.echo(f"{name:<10}{shapes.get(name, '-'):<24}{count:>14,}")
    total = model.params.total
    click.echo(f"Total de parámetros: {total:,} ({_millions(total)})")
    if flops:
        total_flops = sum(breakdown.values())
        detail = ", ".join(f"{k}={v / 1e9:.3f}G" for k, v in sorted(breakdown.items()))
        click.echo(f"Total de FLOPs: {total_flops:,} ({total_flops / 1e9:.2f}G; {detail})")
