import os


def _threads_from_env():
    try:
        threads = int(os.environ.get('AFIDAF_THREADS', os.cpu_count() or 1))
    except ValueError:
        return 1
    return max(1, threads)


class Config:
    # Paralelismo - máximo de workers para las suites de verificación
    THREADS = _threads_from_env()

    # Precisión por defecto para entrenamiento/inferencia (la verificación siempre usa f64)
    DEFAULT_DTYPE = os.environ.get('AFIDAF_DTYPE', 'f32')
    if DEFAULT_DTYPE not in ('f32', 'f64'):
        DEFAULT_DTYPE = 'f32'

    # Logging
    LOG_LEVEL = os.environ.get('AFIDAF_LOG_LEVEL', 'INFO')

    # Carpeta de salida para entrenamientos
    OUT_DIR = os.environ.get('AFIDAF_OUT_DIR', 'runs')

    # Presets JSON empaquetados
    CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')

    # Nombre del archivo de pesos dentro de una corrida
    WEIGHTS_FILENAME = 'weights.afwt'
    MODEL_FILENAME = 'model.json'
    METRICS_FILENAME = 'metrics.csv'
    SUMMARY_FILENAME = 'summary.json'
