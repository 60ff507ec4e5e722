# afidaf/weights.py
"""
Contenedor binario de pesos (.afwt).

Disposición (todo little-endian):
    "AFWT" | versión u32 | n u32 |
    n × [ largo u32 | nombre UTF-8 | rango u32 | extents u64… | dtype u8 | datos ] |
    CRC32 u32 de todos los bytes anteriores
"""
import struct
import zlib

import numpy as np

from .models import Model, ModelConfig, ParamStore, model_param_specs
from .tensor import Tensor
from .utils import WeightFormatError, log_error, log_info

MAGIC = b"AFWT"
VERSION = 1
DTYPE_CODES = {"f32": 0, "f64": 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEADER = struct.Struct("<4sII")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def encode(store) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(store))]
    for name, t in store.items():
        raw_name = name.encode("utf-8")
        parts.append(_U32.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_U32.pack(t.ndim))
        parts.extend(_U64.pack(n) for n in t.shape)
        code = DTYPE_CODES[t.dtype]
        parts.append(bytes([code]))
        parts.append(np.ascontiguousarray(t.data, dtype=_CODE_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, blob, end):
        self.blob = blob
        self.pos = 0
        self.end = end

    def take(self, n):
        if self.pos + n > self.end:
            raise WeightFormatError("archivo de pesos truncado")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def u64(self):
        return _U64.unpack(self.take(8))[0]


def decode(blob: bytes) -> ParamStore:
    if len(blob) < _HEADER.size + 4:
        raise WeightFormatError("archivo de pesos truncado")
    magic, version, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise WeightFormatError(f"magic inválido: {magic!r}")
    if version != VERSION:
        raise WeightFormatError(f"versión de formato no soportada: {version}")
    stored = _U32.unpack(blob[-4:])[0]
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise WeightFormatError(f"checksum mismatch: esperado {stored:08x}, calculado {actual:08x}")

    reader = _Reader(blob, len(blob) - 4)
    reader.pos = _HEADER.size
    store = ParamStore()
    for _ in range(count):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFormatError("nombre de tensor con UTF-8 inválido") from e
        shape = tuple(reader.u64() for _ in range(reader.u32()))
        code = reader.take(1)[0]
        if code not in _CODE_DTYPES:
            raise WeightFormatError(f"{name}: código de dtype desconocido {code}")
        dtype = _CODE_DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(reader.take(size * dtype.itemsize), dtype=dtype).reshape(shape)
        arr = arr.astype(dtype.newbyteorder("="))
        if not np.all(np.isfinite(arr)):
            raise WeightFormatError(f"{name}: valores no finitos")
        if name in store:
            raise WeightFormatError(f"tensor duplicado: {name}")
        store.add(name, Tensor._wrap(arr, check=False))
    if reader.pos != reader.end:
        raise WeightFormatError("bytes sobrantes después de la última entrada")
    return store


def save_weights(store, path):
    blob = encode(store)
    with open(path, "wb") as f:
        f.write(blob)
    log_info(f"Pesos guardados en {path} ({len(store)} tensores, {len(blob):,} bytes)")


def load_weights(path) -> ParamStore:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        store = decode(blob)
    except WeightFormatError as e:
        log_error(f"No se pudieron leer los pesos de {path}", e)
        raise
    log_info(f"Pesos cargados desde {path} ({len(store)} tensores)")
    return store


def restore(config: ModelConfig, store: ParamStore) -> Model:
    """Arma un Model verificando que nombres y formas coincidan con la configuración"""
    expected = [(s.name, tuple(s.shape)) for s in model_param_specs(config)]
    found = [(name, tuple(t.shape)) for name, t in store.items()]
    if expected != found:
        missing = sorted(set(expected) - set(found))[:3]
        raise WeightFormatError(f"los pesos no corresponden al modelo {config.variant}; p. ej. {missing}")
    dtypes = {t.dtype for t in store.values()}
    if len(dtypes) != 1:
        raise WeightFormatError(f"dtypes mezclados en los pesos: {sorted(dtypes)}")
    return Model(config, store)
