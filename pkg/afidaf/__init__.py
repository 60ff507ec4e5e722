# afidaf/__init__.py
import click

from .config import Config
from .commands.summarize import summarize_cmd
from .commands.train import eval_cmd, train_cmd
from .commands.verify import verify_cmd
from .utils import configure_logging


def create_cli():
    # 1. Creamos el grupo de comandos
    @click.group(context_settings={"help_option_names": ["-h", "--help"]})
    @click.option("--log-level", default=None, help="Nivel de logging (por defecto AFIDAF_LOG_LEVEL).")
    def cli(log_level):
        """Mezcla de tokens en doble dominio (espacial + Fourier) para clasificación de imágenes."""
        # 2. Configuramos el logging
        configure_logging(log_level or Config.LOG_LEVEL)

    # 3. Registramos los comandos
    cli.add_command(summarize_cmd)
    cli.add_command(verify_cmd)
    cli.add_command(train_cmd)
    cli.add_command(eval_cmd)

    return cli
