# afidaf/verify.py
"""
Suites de verificación: gradientes por diferencias finitas, identidades
espectrales, álgebra del barajado y equivalencia contra oráculos.

Cada chequeo es independiente; se ejecutan en un pool de hilos y el reporte
respeta el orden de registro.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import oracles
from .blocks import (BlockConfig, ParamView, _fconv_spec, afidaf_block, attention_conv, attention_specs,
                     block_param_specs, f_conv, f_mask, fconv_specs, gsmlp, gsmlp_specs, hafidaf_conv_block,
                     hafidaf_mask_block, m_c, m_i, m_i_specs, mask_specs)
from .config import Config
from .models import ParamStore, top_k_accuracy
from .ops import Conv2dSpec, conv2d, global_avg_pool, group_linear, group_shuffle, layer_norm, linear, \
    softmax_cross_entropy
from .spectral import Spectrum, _fft2_full, circular_conv_fft, fft2, ifft2
from .tensor import elementwise, grad_check_report, matmul, tensor
from .train import AdamWState, TrainConfig, adamw_step
from .utils import log_error, log_info

SUITES = ("grad", "spectral", "shuffle", "oracle")

GRAD_TOL = 1e-5
LINEAR_GRAD_TOL = 1e-6
POINTS = 3


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.suite}/{self.name}: {self.value:.3e} < {self.threshold:.0e}{extra}"


# --- HELPERS ---
def random_params(specs, rng, scale=0.3):
    """Parámetros f64 aleatorios de magnitud moderada (ganancias alrededor de 1)"""
    params = {}
    for spec in specs:
        values = rng.standard_normal(spec.shape)
        if spec.init == "ones":
            values = 1.0 + 0.1 * values
        else:
            values = scale * values
        params[spec.name] = tensor(values)
    return params


def _random(rng, *shape):
    return tensor(rng.standard_normal(shape))


def _weighted_sum(y, weights):
    """Funcional escalar Σ y⊙R para llevar una salida tensorial a grad_check"""
    return (y * weights).sum()


def _small_block(kind, channels=4, **overrides):
    cfg = dict(shuffle_groups=2, mask_groups=2, mlp_ratio=2, mlp_groups=2)
    cfg.update(overrides)
    return BlockConfig(kind=kind, channels=channels, **cfg)


# --- SUITE: GRADIENTES ---
def _grad_cases():
    """(nombre, tolerancia, fábrica(rng) → (f, x)) para cada operación diferenciable"""
    cases = []

    def add(name, factory, tol=GRAD_TOL):
        cases.append((name, tol, factory))

    def elementwise_case(op):
        def factory(rng):
            other, weights = _random(rng, 3, 4), _random(rng, 3, 4)
            if op in ("relu", "gelu"):
                return (lambda x: _weighted_sum(elementwise(op, x), weights)), _random(rng, 3, 4)
            return (lambda x: _weighted_sum(elementwise(op, x, other), weights)), _random(rng, 3, 4)
        return factory

    for op in ("add", "sub", "mul", "relu", "gelu"):
        add(f"elementwise.{op}", elementwise_case(op))

    def matmul_case(rng):
        b, weights = _random(rng, 4, 3), _random(rng, 5, 3)
        return (lambda x: _weighted_sum(matmul(x, b), weights)), _random(rng, 5, 4)
    add("matmul", matmul_case)

    def conv_case(rng):
        spec = Conv2dSpec.same(4, 4, 3, groups=2, dilation=2, stride=2)
        w, b = _random(rng, *spec.weight_shape), _random(rng, 4)
        weights = _random(rng, 1, 4, *spec.output_size(6, 6))
        return (lambda x: _weighted_sum(conv2d(x, spec, w, b), weights)), _random(rng, 1, 4, 6, 6)
    add("conv2d.input", conv_case)

    def conv_weight_case(rng):
        spec = Conv2dSpec.same(4, 2, 3, groups=2)
        x, b = _random(rng, 1, 4, 5, 5), _random(rng, 2)
        weights = _random(rng, 1, 2, 5, 5)
        return (lambda w: _weighted_sum(conv2d(x, spec, w, b), weights)), _random(rng, *spec.weight_shape)
    add("conv2d.weight", conv_weight_case)

    def shuffle_case(rng):
        weights = _random(rng, 1, 6, 2, 2)
        return (lambda x: _weighted_sum(group_shuffle(x, 3), weights)), _random(rng, 1, 6, 2, 2)
    add("group_shuffle", shuffle_case)

    def norm_case(rng):
        gamma, beta, weights = _random(rng, 5), _random(rng, 5), _random(rng, 2, 5, 3)
        return (lambda x: _weighted_sum(layer_norm(x, 1, gamma, beta), weights)), _random(rng, 2, 5, 3)
    add("layer_norm", norm_case)

    def group_linear_case(rng):
        w, b, weights = _random(rng, 2, 3, 2), _random(rng, 6), _random(rng, 3, 6)
        return (lambda x: _weighted_sum(group_linear(x, w, b), weights)), _random(rng, 3, 4)
    add("group_linear", group_linear_case)

    def linear_case(rng):
        w, b, weights = _random(rng, 3, 4), _random(rng, 3), _random(rng, 2, 3)
        return (lambda x: _weighted_sum(linear(x, w, b), weights)), _random(rng, 2, 4)
    add("linear", linear_case)

    def pool_ce_case(rng):
        labels = rng.integers(0, 4, size=2)
        return (lambda x: softmax_cross_entropy(global_avg_pool(x), labels)), _random(rng, 2, 4, 3, 3)
    add("global_avg_pool+cross_entropy", pool_ce_case)

    def fft_case(rng):
        w_re, w_im = _random(rng, 1, 2, 5, 4), _random(rng, 1, 2, 5, 4)

        def f(x):
            s = fft2(x)
            return _weighted_sum(s.re, w_re) + _weighted_sum(s.im, w_im)
        return f, _random(rng, 1, 2, 5, 6)
    add("fft2", fft_case, LINEAR_GRAD_TOL)

    def ifft_case(rng):
        im, weights = _random(rng, 1, 2, 4, 3), _random(rng, 1, 2, 4, 4)
        return (lambda re: _weighted_sum(ifft2(Spectrum(re, im, 4)), weights)), _random(rng, 1, 2, 4, 3)
    add("ifft2", ifft_case, LINEAR_GRAD_TOL)

    def circular_case(rng):
        k, weights = _random(rng, 2, 4, 4), _random(rng, 1, 2, 4, 4)
        return (lambda x: _weighted_sum(circular_conv_fft(x, k), weights)), _random(rng, 1, 2, 4, 4)
    add("circular_conv_fft", circular_case)

    def block_case(name, forward, specs_for, cfg):
        def factory(rng):
            p = ParamView(random_params(specs_for(cfg), rng))
            labels = rng.integers(0, cfg.channels, size=1)
            return (lambda x: softmax_cross_entropy(global_avg_pool(forward(x, cfg, p)), labels)), \
                _random(rng, 1, cfg.channels, 6, 6)
        add(name, factory)

    small = _small_block("afidaf")
    block_case("attention_conv", attention_conv, attention_specs, small)
    block_case("m_i", m_i, m_i_specs, small)
    block_case("m_c", m_c, mask_specs, small)
    block_case("f_mask", f_mask, mask_specs, _small_block("hafidaf_mask"))
    block_case("f_conv", f_conv, fconv_specs, _small_block("hafidaf_conv"))
    block_case("gsmlp", gsmlp, gsmlp_specs, small)
    for kind in ("afidaf", "idaf", "aff"):
        block_case(f"{kind}_block", afidaf_block, block_param_specs, _small_block(kind))
    for index in (0, 1):
        block_case(f"hafidaf_conv_block[{index}]",
                   lambda x, c, p, i=index: hafidaf_conv_block(x, c, p, i),
                   lambda c, i=index: block_param_specs(c, i), _small_block("hafidaf_conv"))
    block_case("hafidaf_mask_block", hafidaf_mask_block, block_param_specs, _small_block("hafidaf_mask"))

    def mini_network(rng):
        cfg = _small_block("afidaf")
        first = ParamView(random_params(block_param_specs(cfg), rng))
        second = ParamView(random_params(block_param_specs(cfg.with_kind("aff")), rng))
        labels = rng.integers(0, 4, size=2)

        def f(x):
            h = afidaf_block(x, cfg, first)
            h = afidaf_block(h, cfg.with_kind("aff"), second)
            return softmax_cross_entropy(global_avg_pool(h), labels)
        return f, _random(rng, 2, 4, 4, 4)
    add("mini_network", mini_network)
    return cases


def _grad_check_runner(name, tol, factory, seed):
    def run():
        worst, excluded = 0.0, 0
        for point in range(POINTS):
            rng = np.random.default_rng(seed * 100 + point)
            f, x = factory(rng)
            report = grad_check_report(f, x)
            worst = max(worst, report.max_rel_error)
            excluded += report.excluded
        detail = f"{excluded} coords excluidas por quiebres ReLU" if excluded else ""
        return CheckResult("grad", name, worst < tol, worst, tol, detail)
    return run


def grad_suite():
    return [_grad_check_runner(name, tol, factory, i) for i, (name, tol, factory) in enumerate(_grad_cases())]


# --- SUITE: ESPECTRAL ---
def _check(suite, name, value, threshold, detail=""):
    value = float(value)
    return CheckResult(suite, name, value < threshold, value, threshold, detail)


def _planes(x):
    return x.data.reshape(-1, *x.shape[-2:])


def spectral_suite():
    checks = []

    def naive_dft(size):
        def run():
            rng = np.random.default_rng(size)
            x = _random(rng, 1, 1, size, size)
            full = fft2(x).full_plane()[0, 0]
            err = np.abs(full - oracles.naive_dft2(x.data[0, 0])).max()
            return _check("spectral", f"naive_dft.{size}x{size}", err, 1e-9)
        return run

    def roundtrip():
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(20):
            h, w = rng.integers(2, 17, size=2)
            x = _random(rng, 1, 2, int(h), int(w))
            worst = max(worst, np.abs(ifft2(fft2(x)).data - x.data).max())
        return _check("spectral", "roundtrip", worst, 1e-10, "H, W ∈ [2, 16]")

    def parseval():
        rng = np.random.default_rng(2)
        worst = 0.0
        for size in (4, 8, 7, 12):
            x = _random(rng, 1, 1, size, size)
            energy = (x.data ** 2).sum()
            spectral = (np.abs(fft2(x).full_plane()) ** 2).sum() / (size * size)
            worst = max(worst, abs(energy - spectral) / energy)
        return _check("spectral", "parseval", worst, 1e-10)

    def linearity():
        rng = np.random.default_rng(3)
        x1, x2 = _random(rng, 1, 2, 6, 8), _random(rng, 1, 2, 6, 8)
        s1, s2 = fft2(x1), fft2(x2)
        lhs = ifft2(2.5 * s1 + (-0.75) * s2).data
        rhs = 2.5 * ifft2(s1).data - 0.75 * ifft2(s2).data
        return _check("spectral", "linearity", np.abs(lhs - rhs).max(), 1e-10)

    def hermitian():
        rng = np.random.default_rng(4)
        worst = 0.0
        for h, w in ((4, 4), (5, 6), (8, 7), (6, 6)):
            s = fft2(_random(rng, 1, 1, h, w))
            worst = max(worst, _inverse_imag(s), np.abs(s.im.data[0, 0, 0, 0]))
        return _check("spectral", "hermitian", worst, 1e-10, "residuo imaginario y DC real")

    def convolution_theorem():
        rng = np.random.default_rng(5)
        worst = 0.0
        for i in range(50):
            size = (4, 8, 16)[i % 3]
            x = _random(rng, 1, 2, size, size)
            kernel = np.zeros((2, size, size))
            kernel[:, :3, :3] = rng.standard_normal((2, 3, 3))
            fast = circular_conv_fft(x, tensor(kernel)).data[0]
            worst = max(worst, np.abs(fast - oracles.direct_circular_conv(x.data[0], kernel)).max())
        return _check("spectral", "convolution_theorem", worst, 1e-9, "50 pares, H=W ∈ {4, 8, 16}")

    checks += [naive_dft(4), naive_dft(8), roundtrip, parseval, linearity, hermitian, convolution_theorem]
    return checks


def _inverse_imag(s: Spectrum):
    """Residuo imaginario de invertir el plano completo reconstruido"""
    full = s.full_plane()
    return np.abs(_fft2_full(full, inverse=True).imag).max() / (s.height * s.orig_width)


# --- SUITE: BARAJADO ---
def shuffle_suite():
    def run():
        failures = []
        for channels in range(1, 25):
            x = tensor(np.arange(channels, dtype=float).reshape(1, channels, 1, 1))
            for g in (d for d in range(1, channels + 1) if channels % d == 0):
                out = group_shuffle(x, g).data.ravel()
                if not np.array_equal(np.sort(out), np.arange(channels)):
                    failures.append(f"C={channels} g={g}: no es permutación")
                if not np.array_equal(out, oracles.shuffle_permutation(channels, g)):
                    failures.append(f"C={channels} g={g}: permutación distinta")
                back = group_shuffle(group_shuffle(x, g), channels // g).data.ravel()
                if not np.array_equal(back, np.arange(channels)):
                    failures.append(f"C={channels} g={g}: shuffle(C/g) no la invierte")
                if g == 1 and not np.array_equal(out, np.arange(channels)):
                    failures.append(f"C={channels}: g=1 no es identidad")
        detail = "; ".join(failures[:3]) or "C ≤ 24, todos los divisores"
        return CheckResult("shuffle", "permutation_algebra", not failures, float(len(failures)), 1, detail)
    return [run]


# --- SUITE: ORÁCULOS ---
def oracle_suite():
    def broadcast():
        rng = np.random.default_rng(10)
        worst = 0.0
        for shape, other in oracles.broadcast_shape_pairs(max_rank=4, max_extent=3):
            a, b = rng.standard_normal(shape), rng.standard_normal(other)
            got = elementwise("add", tensor(a), tensor(b)).data
            worst = max(worst, np.abs(got - oracles.broadcast_elementwise(float.__add__, a, b)).max())
            got = elementwise("sub", tensor(b), tensor(a)).data
            worst = max(worst, np.abs(got - oracles.broadcast_elementwise(float.__sub__, b, a)).max())
        return _check("oracle", "broadcast", worst, 1e-12, "rango ≤ 4, extents ≤ 3, todas las parejas")

    def matmul_oracle():
        rng = np.random.default_rng(11)
        a, b = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
        err = np.abs(matmul(tensor(a), tensor(b)).data - oracles.triple_loop_matmul(a, b)).max()
        return _check("oracle", "matmul", err, 1e-12)

    def conv_corners():
        rng = np.random.default_rng(12)
        worst = 0.0
        channels = 4
        for stride in (1, 2):
            for dilation in (1, 3):
                for groups in (1, channels // 2, channels):
                    spec = Conv2dSpec.same(channels, channels, 3, groups=groups, dilation=dilation, stride=stride)
                    x = rng.standard_normal((2, channels, 7, 7))
                    w, b = rng.standard_normal(spec.weight_shape), rng.standard_normal(channels)
                    fast = conv2d(tensor(x), spec, tensor(w), tensor(b)).data
                    slow = oracles.naive_conv2d(x, w, b, spec.stride, spec.dilation, groups, spec.padding)
                    worst = max(worst, np.abs(fast - slow).max())
        return _check("oracle", "conv2d", worst, 1e-11, "stride {1,2} × dilation {1,3} × groups {1,C/2,C}")

    def group_linear_oracle():
        rng = np.random.default_rng(13)
        w, b, x = rng.standard_normal((3, 4, 2)), rng.standard_normal(12), rng.standard_normal((5, 6))
        dense = x @ oracles.block_diagonal(w).T + b
        err = np.abs(group_linear(tensor(x), tensor(w), tensor(b)).data - dense).max()
        return _check("oracle", "group_linear", err, 1e-12)

    def layer_norm_oracle():
        rng = np.random.default_rng(14)
        x, gamma, beta = rng.standard_normal((2, 6, 3, 3)), rng.standard_normal(6), rng.standard_normal(6)
        fast = layer_norm(tensor(x), 1, tensor(gamma), tensor(beta)).data
        err = np.abs(fast - oracles.explicit_layer_norm(x, (1,), gamma, beta)).max()
        return _check("oracle", "layer_norm", err, 1e-10)

    def cross_entropy_oracle():
        rng = np.random.default_rng(15)
        logits, labels = rng.standard_normal((8, 10)), rng.integers(0, 10, size=8)
        fast = softmax_cross_entropy(tensor(logits), labels).item()
        slow = oracles.direct_cross_entropy(logits, labels)
        return _check("oracle", "cross_entropy", abs(fast - slow) / abs(slow), 1e-12)

    def top_k_oracle():
        rng = np.random.default_rng(16)
        logits = rng.integers(0, 4, size=(100, 10)).astype(float)
        labels = rng.integers(0, 10, size=100)
        worst = max(abs(top_k_accuracy(logits, labels, k) - oracles.sort_top_k(logits, labels, k))
                    for k in (1, 5))
        return _check("oracle", "top_k", worst, 1e-15, "con empates")

    def m_c_oracle():
        rng = np.random.default_rng(17)
        cfg = _small_block("afidaf")
        params = random_params(mask_specs(cfg), rng)
        x = rng.standard_normal((1, cfg.channels, 4, 6))
        fast = m_c(tensor(x), cfg, ParamView(params)).data
        slow = oracles.m_c_reference(x, *(params[k].data for k in ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")))
        return _check("oracle", "m_c", np.abs(fast - slow).max(), 1e-9)

    def f_conv_oracle():
        rng = np.random.default_rng(18)
        cfg = _small_block("hafidaf_conv")
        params = random_params(fconv_specs(cfg), rng)
        x = rng.standard_normal((1, cfg.channels, 5, 6))
        fast = f_conv(tensor(x), cfg, ParamView(params)).data
        slow = oracles.f_conv_reference(x, params["fconv.weight"].data, params["fconv.bias"].data,
                                        _fconv_spec(cfg).padding)
        return _check("oracle", "f_conv", np.abs(fast - slow).max(), 1e-9)

    def adamw_oracle():
        rng = np.random.default_rng(19)
        curvature = rng.uniform(0.5, 2.0, size=3)
        start = rng.standard_normal(3)
        cfg = TrainConfig()
        store = ParamStore({"w.weight": tensor(start)})
        state = AdamWState.zeros(store)
        scalars = [[0, 0.0, 0.0] for _ in start]
        values = list(start)
        worst = 0.0
        for _ in range(10):
            grad = curvature * store["w.weight"].data
            adamw_step(store, {"w.weight": grad}, state, 1e-2, cfg)
            for i in range(3):
                values[i] = oracles.adamw_reference(values[i], curvature[i] * values[i], scalars[i],
                                                    1e-2, cfg.weight_decay, cfg.betas, cfg.eps)
            worst = max(worst, np.abs(store["w.weight"].data - np.array(values)).max())
        return _check("oracle", "adamw", worst, 1e-10, "10 pasos sobre un cuenco cuadrático")

    return [broadcast, matmul_oracle, conv_corners, group_linear_oracle, layer_norm_oracle,
            cross_entropy_oracle, top_k_oracle, m_c_oracle, f_conv_oracle, adamw_oracle]


_SUITES = {"grad": grad_suite, "spectral": spectral_suite, "shuffle": shuffle_suite, "oracle": oracle_suite}


def _guarded(suite, check):
    try:
        return check()
    except Exception as e:
        name = getattr(check, "__name__", "check")
        return CheckResult(suite, name, False, float("nan"), 0, f"error: {e}")


def run_suite(suite="all", threads=None):
    """Ejecuta las suites pedidas y devuelve los resultados en orden de registro"""
    names = SUITES if suite == "all" else (suite,)
    jobs = []
    for name in names:
        if name not in _SUITES:
            raise ValueError(f"suite desconocida: {name}")
        jobs += [(name, check) for check in _SUITES[name]()]

    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads or Config.THREADS) as pool:
        futures = [pool.submit(_guarded, name, check) for name, check in jobs]
        results = [f.result() for f in futures]
    failed = [r for r in results if not r.passed]
    for r in failed:
        log_error(f"Falló {r.suite}/{r.name}", r.detail or f"{r.value:.3e} ≥ {r.threshold:.0e}")
    log_info(f"Verificación '{suite}': {len(results) - len(failed)}/{len(results)} chequeos "
             f"en {time.perf_counter() - started:.1f} s")
    return results
