# afidaf/tensor.py
"""
Tensores densos con diferenciación automática en modo reverso.

Cada operación diferenciable cuyas entradas viven en una cinta (Tape)
agrega un nodo a esa cinta; backward() la recorre en orden inverso y
visita cada nodo una sola vez. Los tensores son inmutables: sus datos
son arreglos numpy de solo lectura.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

import numpy as np

from .utils import ContractError, NumericError, ShapeError, record_flops

DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

# Constantes de la aproximación tanh de GELU
GELU_SCALE = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715

# Patrones de activación ReLU observados durante una evaluación de grad_check
_kinks = threading.local()


def _resolve_dtype(data, dtype):
    if dtype is not None:
        if dtype not in DTYPES:
            raise ContractError(f"dtype no soportado: {dtype}")
        return DTYPES[dtype]
    if isinstance(data, np.ndarray) and data.dtype == np.float32:
        return np.float32
    return np.float64


class Node:
    """Nodo de la cinta: operación, nodos padre y la VJP con los valores guardados"""

    __slots__ = ("tape", "index", "op", "parents", "vjp", "shape")

    def __init__(self, tape, index, op, parents, vjp, shape):
        self.tape = tape
        self.index = index
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.shape = shape

    @property
    def is_leaf(self):
        return self.vjp is None

    def __repr__(self):
        return f"Node({self.index}, {self.op}, shape={self.shape})"


class Tape:
    """
    Registro ordenado de operaciones.

    Un solo escritor: cada pase forward/backward (o cada worker en una
    evaluación paralela) usa su propia cinta.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def watch(self, tensor: Tensor) -> Tensor:
        """Registra `tensor` como hoja y devuelve la vista diferenciable"""
        node = self._append("leaf", (), None, tensor.shape)
        out = Tensor._wrap(tensor.data, check=False)
        out.grad_node = node
        return out

    def leaves(self):
        return [node for node in self.nodes if node.is_leaf]

    def _append(self, op, parents, vjp, shape):
        node = Node(self, len(self.nodes), op, parents, vjp, shape)
        self.nodes.append(node)
        return node


class Tensor:
    """Arreglo real denso (f32/f64), fila-mayor, con nodo opcional en una cinta"""

    __slots__ = ("_data", "grad_node")
    __array_priority__ = 100

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=_resolve_dtype(data, dtype), copy=True)
        _check_finite(arr, "constructor")
        arr.flags.writeable = False
        self._data = arr
        self.grad_node = None

    @classmethod
    def _wrap(cls, arr, op="op", check=True):
        if check:
            _check_finite(arr, op)
        arr = np.asarray(arr)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out = object.__new__(cls)
        out._data = arr
        out.grad_node = None
        return out

    # --- propiedades ---
    @property
    def data(self):
        return self._data

    @property
    def shape(self):
        return self._data.shape

    @property
    def dtype(self):
        return _DTYPE_NAMES[self._data.dtype]

    @property
    def ndim(self):
        return self._data.ndim

    @property
    def size(self):
        return self._data.size

    @property
    def on_tape(self):
        return self.grad_node is not None

    def item(self):
        if self.size != 1:
            raise ContractError(f"item() requiere un tensor de un elemento, forma {self.shape}")
        return float(self._data.reshape(()))

    def astype(self, dtype):
        return Tensor(self._data, dtype=dtype)

    def __repr__(self):
        tag = f", node={self.grad_node.index}" if self.grad_node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # --- aritmética ---
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __neg__(self):
        return elementwise("mul", self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("solo se soporta división entre escalares")
        return elementwise("mul", self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    # --- atajos ---
    def relu(self):
        return elementwise("relu", self)

    def gelu(self):
        return elementwise("gelu", self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


# --- CONSTRUCTORES ---
def tensor(data, dtype="f64"):
    return Tensor(data, dtype=dtype)

def zeros(shape, dtype="f64"):
    return Tensor._wrap(np.zeros(shape, dtype=DTYPES[dtype]), check=False)

def ones(shape, dtype="f64"):
    return Tensor._wrap(np.ones(shape, dtype=DTYPES[dtype]), check=False)

def ones_like(t):
    return ones(t.shape, t.dtype)


# --- INFRAESTRUCTURA DE LA CINTA ---
def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: se produjeron valores no finitos")


def _lift(value, like):
    """Convierte escalares/arreglos en tensores constantes del dtype de `like`"""
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=like.data.dtype), op="constante")


def _record(data, op, inputs, vjp):
    out = Tensor._wrap(data, op=op)
    parents = tuple(t.grad_node for t in inputs)
    live = [p for p in parents if p is not None]
    if not live:
        return out
    tape = live[0].tape
    if any(p.tape is not tape for p in live):
        raise ContractError(f"{op}: entradas registradas en cintas distintas")
    out.grad_node = tape._append(op, parents, vjp, out.shape)
    return out


def _unbroadcast(grad, shape):
    """Suma el gradiente sobre los ejes que se expandieron por broadcast"""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _note_relu_pattern(mask):
    patterns = getattr(_kinks, "patterns", None)
    if patterns is not None:
        patterns.append(np.packbits(mask, axis=None))


# --- OPERACIONES ELEMENTO A ELEMENTO ---
def _add(a, b):
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _record(a.data + b.data, "add", (a, b), vjp)

def _sub(a, b):
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _record(a.data - b.data, "sub", (a, b), vjp)

def _mul(a, b):
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)
    return _record(a_data * b_data, "mul", (a, b), vjp)

def _relu(x):
    # Subgradiente en 0 definido como 0
    mask = x.data > 0
    _note_relu_pattern(mask)

    def vjp(g):
        return (g * mask,)
    return _record(np.where(mask, x.data, 0).astype(x.data.dtype), "relu", (x,), vjp)

def _gelu(x):
    v = x.data
    t = np.tanh(GELU_SCALE * (v + GELU_CUBIC * v ** 3))

    def vjp(g):
        dt = (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)
    return _record(0.5 * v * (1.0 + t), "gelu", (x,), vjp)

_BINARY = {"add": _add, "sub": _sub, "mul": _mul}
_UNARY = {"relu": _relu, "gelu": _gelu}


def elementwise(op, a, b=None):
    """
    Aplica add/sub/mul (con broadcast por dimensiones finales) o relu/gelu.

    GELU usa la aproximación tanh: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
    """
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} es unaria")
        if not isinstance(a, Tensor):
            raise ContractError(f"{op} requiere un Tensor")
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ContractError(f"operación desconocida: {op}")
    if b is None:
        raise ContractError(f"{op} requiere dos operandos")
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError(f"{op} requiere al menos un Tensor")
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    if not isinstance(b, Tensor):
        b = _lift(b, a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: formas {a.shape} y {b.shape} no son compatibles") from e
    return _BINARY[op](a, b)


# --- ÁLGEBRA LINEAL Y FORMA ---
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Contracción estándar [.., M, K] @ [.., K, N] con broadcast de ejes de lote"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requiere rango ≥ 2, recibió {a.shape} y {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: dimensión interna {a.shape[-1]} != {b.shape[-2]}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise ShapeError(f"matmul: lotes {a.shape[:-2]} y {b.shape[:-2]} incompatibles") from e
    a_data, b_data = a.data, b.data
    m, k = a.shape[-2:]
    n = b.shape[-1]
    record_flops("matmul", 2 * m * k * n * math.prod(batch))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b_data, -1, -2))
        gb = np.matmul(np.swapaxes(a_data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _record(np.matmul(a_data, b_data), "matmul", (a, b), vjp)


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    def vjp(g):
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _record(out, "sum", (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    return reduce_sum(x, axes, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {x.shape} no se puede llevar a {shape}") from e

    def vjp(g):
        return (g.reshape(x.shape),)
    return _record(out, "reshape", (x,), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: permutación inválida {axes} para rango {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)
    return _record(x.data.transpose(axes), "transpose", (x,), vjp)


def _is_basic_index(key):
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x: Tensor, key) -> Tensor:
    """Indexado básico (enteros, slices, Ellipsis); sin índices avanzados"""
    if not _is_basic_index(key):
        raise ContractError("solo se soporta indexado básico")
    out = np.array(x.data[key])

    def vjp(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[key] += g
        return (full,)
    return _record(out, "getitem", (x,), vjp)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: formas incompatibles {[t.shape for t in tensors]}") from e
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _record(out, "concat", tensors, vjp)


def stack(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"stack: formas distintas {[t.shape for t in tensors]}") from e

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _record(out, "stack", tensors, vjp)


# --- BACKWARD ---
class Gradients(Mapping):
    """Mapa hoja → dLoss/dHoja; acepta como llave el nodo o el tensor observado"""

    def __init__(self, grads):
        self._grads = grads

    def _key(self, key):
        return key.grad_node if isinstance(key, Tensor) else key

    def __getitem__(self, key):
        return self._grads[self._key(key)]

    def __contains__(self, key):
        return self._key(key) in self._grads

    def __iter__(self) -> Iterator[Node]:
        return iter(self._grads)

    def __len__(self):
        return len(self._grads)


def backward(loss: Tensor) -> Gradients:
    """
    Propaga dLoss hacia todas las hojas de la cinta de `loss`.

    La acumulación sigue el orden inverso de la cinta, por lo que el
    resultado es determinista.
    """
    if loss.size != 1:
        raise ContractError(f"backward requiere una pérdida escalar, forma {loss.shape}")
    root = loss.grad_node
    if root is None:
        raise ContractError("la pérdida no está registrada en ninguna cinta")
    tape = root.tape
    pending = {root.index: np.ones(loss.shape, dtype=loss.data.dtype)}
    result = {}
    for node in reversed(tape.nodes[: root.index + 1]):
        grad = pending.pop(node.index, None)
        if grad is None:
            continue
        if node.is_leaf:
            result[node] = Tensor._wrap(np.asarray(grad).reshape(node.shape), op="gradiente")
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(grad)):
            if parent is None or parent_grad is None:
                continue
            if parent.index in pending:
                pending[parent.index] = pending[parent.index] + parent_grad
            else:
                pending[parent.index] = parent_grad
    for leaf in tape.leaves():
        if leaf not in result:
            result[leaf] = zeros(leaf.shape, _DTYPE_NAMES[loss.data.dtype])
    return Gradients(result)


# --- VERIFICACIÓN POR DIFERENCIAS FINITAS ---
@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int


def _evaluate_at(f, arr):
    _kinks.patterns = []
    try:
        value = f(Tensor._wrap(arr, op="grad_check")).item()
        return value, _kinks.patterns
    finally:
        _kinks.patterns = None


def _same_patterns(first, second):
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


def grad_check_report(f: Callable[[Tensor], Tensor], x: Tensor, eps=1e-5) -> GradCheckReport:
    """
    Compara el gradiente de la cinta con diferencias centrales.

    Error por coordenada: |g_ad − g_fd| / max(1, |g_ad|, |g_fd|). Se excluyen
    las coordenadas cuyos sondeos ±eps cambian algún patrón de activación
    ReLU (el cociente de diferencias no es válido al cruzar un quiebre).
    """
    if not isinstance(x, Tensor) or x.dtype != "f64":
        raise ContractError("grad_check requiere un Tensor f64")
    tape = Tape()
    watched = tape.watch(x)
    out = f(watched)
    if out.size != 1:
        raise ContractError(f"grad_check requiere una función escalar, forma {out.shape}")
    g_ad = backward(out)[watched].data.ravel()

    base = x.data.ravel()
    g_fd = np.empty(base.size)
    keep = np.ones(base.size, dtype=bool)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += eps
        minus = base.copy()
        minus[i] -= eps
        f_plus, kinks_plus = _evaluate_at(f, plus.reshape(x.shape))
        f_minus, kinks_minus = _evaluate_at(f, minus.reshape(x.shape))
        g_fd[i] = (f_plus - f_minus) / (2.0 * eps)
        keep[i] = _same_patterns(kinks_plus, kinks_minus)

    if np.isnan(g_ad).any() or np.isnan(g_fd).any():
        raise NumericError("grad_check: NaN en el gradiente")
    denom = np.maximum(1.0, np.maximum(np.abs(g_ad), np.abs(g_fd)))
    errors = np.abs(g_ad - g_fd) / denom
    worst = float(errors[keep].max()) if keep.any() else 0.0
    return GradCheckReport(worst, int(keep.sum()), int((~keep).sum()))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps=1e-5) -> float:
    """Error relativo máximo entre gradiente automático y diferencias centrales"""
    return grad_check_report(f, x, eps).max_rel_error
