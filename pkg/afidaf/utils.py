# afidaf/utils.py
import logging
import threading
from collections import defaultdict

# Configuración de logging
logger = logging.getLogger(__name__)

# Helper functions para logging
def log_info(message):
    logger.info(f"✅ {message}")

def log_error(message, error=None):
    msg = f"❌ {message}"
    if error:
        msg += f": {str(error)}"
    logger.error(msg)

def log_warning(message):
    logger.warning(f"⚠️ {message}")

def configure_logging(level="INFO"):
    """(Re)configura el logger raíz sobre el stderr actual (formato de consola)"""
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )

# --- EXCEPCIONES PERSONALIZADAS ---
class AfidafError(Exception):
    """Excepción base de la librería"""
    exit_code = 1

class ShapeError(AfidafError, ValueError):
    """Formas incompatibles o grupos que no dividen los canales"""
    pass

class ContractError(AfidafError):
    """Precondición violada por quien llama"""
    pass

class NumericError(AfidafError, ArithmeticError):
    """Aparecieron valores NaN/Inf"""
    pass

class TrainingDivergedError(NumericError):
    """La pérdida dejó de ser finita durante el entrenamiento"""
    exit_code = 4

class ConfigError(AfidafError):
    """Configuración de modelo o de entrenamiento inválida"""
    exit_code = 2

class WeightFormatError(AfidafError):
    """Archivo de pesos corrupto o con formato desconocido"""
    exit_code = 3

# --- CONTADOR DE FLOPS ---
_local = threading.local()

class FlopCounter:
    """
    Acumula FLOPs reportados por las operaciones mientras está activo.

    Uso:
        with FlopCounter() as counter:
            model.forward(x)
        counter.total
    """

    def __init__(self):
        self.by_category = defaultdict(int)

    @property
    def total(self):
        return sum(self.by_category.values())

    def add(self, category, flops):
        self.by_category[category] += int(round(flops))

    def __enter__(self):
        stack = getattr(_local, "counters", None)
        if stack is None:
            stack = _local.counters = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.counters.pop()
        return False

def record_flops(category, flops):
    """Reporta FLOPs al contador activo del hilo (si hay uno)"""
    stack = getattr(_local, "counters", None)
    if stack:
        stack[-1].add(category, flops)
