# afidaf/commands/__init__.py
from functools import wraps

import click

from ..utils import AfidafError, log_error

# Códigos de salida estables (ver README.md)
EXIT_VERIFY_FAILED = 1
EXIT_IO = 3


# --- DECORADORES ---
def handle_errors(f):
    """Traduce las excepciones de la librería a mensajes y códigos de salida"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except AfidafError as e:
            log_error(f"{type(e).__name__} en '{f.__name__}'", e)
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(e.exit_code)
        except OSError as e:
            log_error(f"Error de E/S en '{f.__name__}'", e)
            click.echo(f"Error de E/S: {e}", err=True)
            raise SystemExit(EXIT_IO)
    return decorated_function
