# afidaf/commands/verify.py
import click

from ..verify import SUITES, run_suite
from . import EXIT_VERIFY_FAILED, handle_errors


@click.command("verify")
@click.option("--suite", type=click.Choice(SUITES + ("all",)), default="all", show_default=True,
              help="Suite de chequeos a ejecutar.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Máximo de hilos (por defecto AFIDAF_THREADS).")
@handle_errors
def verify_cmd(suite, threads):
    """Ejecuta las suites de verificación; sale con 1 si algún chequeo falla."""
    results = run_suite(suite, threads)
    for result in results:
        click.echo(result.line())
    failed = [r for r in results if not r.passed]
    if failed:
        click.echo(f"{len(failed)} chequeo(s) fallaron: " + ", ".join(f"{r.suite}/{r.name}" for r in failed))
        raise SystemExit(EXIT_VERIFY_FAILED)
    click.echo(f"Todos los chequeos pasaron ({len(results)}).")
