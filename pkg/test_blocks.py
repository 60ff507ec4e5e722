# test_blocks.py
import logging
import math

import numpy as np
import pytest

from afidaf import oracles
from afidaf.blocks import (BlockConfig, ParamView, _fconv_spec, afidaf_block, attention_conv, attention_specs,
                           block_forward, block_param_specs, channel_mask, channel_norm, f_conv, f_mask, fconv_specs,
                           gsmlp, gsmlp_specs, hafidaf_conv_block, initialize, m_c, m_i, m_i_specs, mask_specs,
                           uses_fconv)
from afidaf.ops import Conv2dSpec, conv2d, global_avg_pool, group_shuffle, softmax_cross_entropy
from afidaf.tensor import grad_check, tensor
from afidaf.utils import ConfigError, ShapeError
from afidaf.verify import random_params


def _params(specs, rng):
    return ParamView(random_params(specs, rng))


def _count(specs):
    return sum(math.prod(s.shape) for s in specs)


# --- CONFIGURACIÓN ---
def test_block_config_rejects_indivisible_groups():
    with pytest.raises(ShapeError):
        BlockConfig(channels=6, shuffle_groups=4)
    with pytest.raises(ShapeError):
        BlockConfig(channels=12, shuffle_groups=4, mask_groups=5)


def test_block_config_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        BlockConfig(kind="swin")


def test_fitted_clamps_groups_to_divisors():
    cfg = BlockConfig.fitted(6, shuffle_groups=4, mask_groups=8)
    assert (cfg.shuffle_groups, cfg.mask_groups) == (2, 2)


def test_fitted_warns_when_explicit_groups_are_clamped(caplog):
    caplog.set_level(logging.WARNING)
    BlockConfig.fitted(6, shuffle_groups=4, mask_groups=3)
    warnings = [r.getMessage() for r in caplog.records if r.levelno == logging.WARNING]
    assert len(warnings) == 1
    assert "shuffle_groups=4" in warnings[0]


def test_receptive_field():
    assert BlockConfig(channels=8).receptive_field == 5 + 6 * 3


def test_fconv_alternates_by_block_index():
    cfg = BlockConfig(kind="hafidaf_conv", channels=8)
    assert [uses_fconv(cfg, i) for i in range(4)] == [False, True, False, True]
    assert not uses_fconv(cfg.with_kind("afidaf"), 1)


# --- CONTEO DE PARÁMETROS ---
@pytest.mark.parametrize("channels", [32, 64, 128])
def test_block_param_formulas(channels):
    cfg = BlockConfig(channels=channels, shuffle_groups=4, mask_groups=4, mlp_ratio=2, mlp_groups=1)
    c = channels
    assert _count(block_param_specs(cfg)) == 9 * c * c + 92 * c
    assert _count(block_param_specs(cfg.with_kind("idaf"))) == 7 * c * c + 86 * c
    assert _count(block_param_specs(cfg.with_kind("aff"))) == 6 * c * c + 11 * c


def test_block_param_names_are_unique_and_ordered():
    cfg = BlockConfig(kind="afidaf", channels=8)
    names = [s.name for s in block_param_specs(cfg)]
    assert len(names) == len(set(names))
    assert names[:2] == ["norm1.gamma", "norm1.beta"]
    assert names.index("mi.attn.dw.weight") < names.index("mc.fc1.weight") < names.index("mlp.fc1.weight")


def test_hafidaf_param_names():
    conv_cfg = BlockConfig(kind="hafidaf_conv", channels=8)
    assert "attn.dw.weight" in [s.name for s in block_param_specs(conv_cfg, 0)]
    assert "fconv.weight" in [s.name for s in block_param_specs(conv_cfg, 1)]
    mask_names = [s.name for s in block_param_specs(BlockConfig(kind="hafidaf_mask", channels=8))]
    assert "fmask.fc1.weight" in mask_names


def test_initialize_rules(rng):
    cfg = BlockConfig(channels=16, shuffle_groups=4, mask_groups=4)
    params = initialize(block_param_specs(cfg), rng, "f64")
    assert np.array_equal(params["norm1.gamma"].data, np.ones(16))
    assert np.array_equal(params["mi.proj_in.bias"].data, np.zeros(16))
    pointwise = params["mi.proj_in.weight"].data
    assert np.abs(pointwise).max() <= 0.04
    assert params["mc.fc1.weight"].dtype == "f64"


def test_param_view_missing_name():
    with pytest.raises(ConfigError):
        ParamView({}, "blocks.0.")["norm1.gamma"]


# --- FILTROS ---
def test_attention_conv_matches_composition(rng, small_cfg):
    cfg = small_cfg()
    p = _params(attention_specs(cfg), rng)
    x = tensor(rng.standard_normal((2, 4, 7, 7)))
    c = cfg.channels
    y = conv2d(x, Conv2dSpec.same(c, c, cfg.dw_kernel, groups=c), p["dw.weight"], p["dw.bias"])
    y = group_shuffle(y, cfg.shuffle_groups)
    y = conv2d(y, Conv2dSpec.same(c, c, cfg.dwd_kernel, groups=c, dilation=cfg.dwd_dilation),
               p["dwd.weight"], p["dwd.bias"])
    y = group_shuffle(y, cfg.shuffle_groups)
    y = conv2d(y, Conv2dSpec(c, c, 1), p["pw.weight"], p["pw.bias"])
    assert np.array_equal(attention_conv(x, cfg, p).data, y.data)


def test_attention_conv_preserves_shape(rng, small_cfg):
    cfg = small_cfg()
    x = tensor(rng.standard_normal((1, 4, 5, 9)))
    assert attention_conv(x, cfg, _params(attention_specs(cfg), rng)).shape == (1, 4, 5, 9)


def test_attention_conv_rejects_wrong_channels(rng, small_cfg):
    cfg = small_cfg()
    with pytest.raises(ShapeError):
        attention_conv(tensor(np.zeros((1, 6, 5, 5))), cfg, _params(attention_specs(cfg), rng))


def test_m_c_matches_reference(rng, small_cfg):
    cfg = small_cfg()
    params = random_params(mask_specs(cfg), rng)
    x = rng.standard_normal((2, 4, 4, 6))
    fast = m_c(tensor(x), cfg, ParamView(params)).data
    slow = oracles.m_c_reference(x, *(params[k].data for k in ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")))
    assert np.abs(fast - slow).max() < 1e-9


def test_f_mask_agrees_with_m_c(rng, small_cfg):
    cfg = small_cfg()
    p = _params(mask_specs(cfg), rng)
    x = tensor(rng.standard_normal((1, 4, 6, 6)))
    assert np.array_equal(f_mask(x, cfg, p).data, m_c(x, cfg, p).data)


def test_f_conv_matches_reference(rng, small_cfg):
    cfg = small_cfg("hafidaf_conv")
    params = random_params(fconv_specs(cfg), rng)
    x = rng.standard_normal((1, 4, 5, 6))
    fast = f_conv(tensor(x), cfg, ParamView(params)).data
    slow = oracles.f_conv_reference(x, params["fconv.weight"].data, params["fconv.bias"].data,
                                    _fconv_spec(cfg).padding)
    assert np.abs(fast - slow).max() < 1e-9


def test_gsmlp_residual(rng, small_cfg):
    cfg = small_cfg()
    p = _params(gsmlp_specs(cfg), rng)
    x = tensor(rng.standard_normal((1, 4, 3, 3)))
    assert np.allclose(gsmlp(x, cfg, p).data, gsmlp(x, cfg, p, residual=False).data + x.data)


def test_gsmlp_requires_hidden_layer(rng, small_cfg):
    cfg = small_cfg(mlp_ratio=0)
    with pytest.raises(ConfigError):
        gsmlp(tensor(np.zeros((1, 4, 2, 2))), cfg, ParamView({}))


@pytest.mark.parametrize("kind", ["afidaf", "idaf", "aff", "hafidaf_conv", "hafidaf_mask"])
def test_blocks_preserve_shape(rng, small_cfg, kind):
    cfg = small_cfg(kind)
    x = tensor(rng.standard_normal((2, 4, 6, 5)))
    for index in (0, 1):
        p = _params(block_param_specs(cfg, index), rng)
        assert block_forward(x, cfg, p, index).shape == x.shape


def test_hafidaf_conv_block_switches_filter(rng, small_cfg):
    cfg = small_cfg("hafidaf_conv")
    p = _params(block_param_specs(cfg, 1), rng)
    x = tensor(rng.standard_normal((1, 4, 4, 4)))
    hafidaf_conv_block(x, cfg, p, 1)
    with pytest.raises(ConfigError):
        hafidaf_conv_block(x, cfg, p, 0)


# --- GRADIENTES ---
def _loss(forward, cfg, p, labels):
    return lambda x: softmax_cross_entropy(global_avg_pool(forward(x, cfg, p)), labels)


@pytest.mark.parametrize("name, forward, specs_for", [
    ("m_i", m_i, m_i_specs),
    ("m_c", m_c, mask_specs),
    ("gsmlp", gsmlp, gsmlp_specs),
])
def test_filter_gradients(rng, small_cfg, name, forward, specs_for):
    cfg = small_cfg()
    p = _params(specs_for(cfg), rng)
    x = tensor(rng.standard_normal((1, 4, 5, 5)))
    assert grad_check(_loss(forward, cfg, p, [1]), x) < 1e-5


@pytest.mark.parametrize("kind", ["afidaf", "aff", "hafidaf_mask"])
def test_block_gradients(rng, small_cfg, kind):
    cfg = small_cfg(kind)
    p = _params(block_param_specs(cfg), rng)
    x = tensor(rng.standard_normal((1, 4, 4, 4)))
    assert grad_check(_loss(block_forward, cfg, p, [2]), x) < 1e-5


def test_f_conv_gradient(rng, small_cfg):
    cfg = small_cfg("hafidaf_conv")
    p = _params(fconv_specs(cfg), rng)
    x = tensor(rng.standard_normal((1, 4, 4, 6)))
    assert grad_check(_loss(f_conv, cfg, p, [0]), x) < 1e-5


# --- CASOS DEGENERADOS ---
def _constant_mask_params(cfg, value):
    """fc1 = 0 con bias 1 (ReLU deja 1), fc2 = 0 con bias `value`: máscara ≡ value"""
    params = random_params(mask_specs(cfg), np.random.default_rng(0))
    params["fc1.weight"] = tensor(np.zeros(params["fc1.weight"].shape))
    params["fc1.bias"] = tensor(np.ones(params["fc1.bias"].shape))
    params["fc2.weight"] = tensor(np.zeros(params["fc2.weight"].shape))
    params["fc2.bias"] = tensor(np.full(params["fc2.bias"].shape, value))
    return ParamView(params)


def test_identity_mask_is_identity(rng, small_cfg):
    cfg = small_cfg()
    x = rng.standard_normal((2, 4, 6, 7))
    assert np.abs(m_c(tensor(x), cfg, _constant_mask_params(cfg, 1.0)).data - x).max() < 1e-10
    assert np.abs(f_mask(tensor(x), cfg, _constant_mask_params(cfg, 1.0)).data - x).max() < 1e-10


def test_zero_mask_is_zero(rng, small_cfg):
    cfg = small_cfg()
    out = m_c(tensor(rng.standard_normal((1, 4, 5, 5))), cfg, _constant_mask_params(cfg, 0.0))
    assert np.abs(out.data).max() < 1e-12


def test_mask_depends_only_on_channel_vector(rng, small_cfg):
    cfg = small_cfg()
    p = _params(mask_specs(cfg), rng)
    vector = rng.standard_normal(8)
    t = np.empty((1, 8, 3, 4))
    t[0] = vector[:, None, None]
    t[0, :, 1, 2] = rng.standard_normal(8)
    mask = channel_mask(tensor(t), cfg, p).data[0].reshape(8, -1)
    same = np.delete(mask, 1 * 4 + 2, axis=1)
    assert np.abs(same - same[:, :1]).max() < 1e-12


def test_m_i_with_zero_output_projection_is_residual(rng, small_cfg):
    cfg = small_cfg()
    params = random_params(m_i_specs(cfg), rng)
    params["proj_out.weight"] = tensor(np.zeros(params["proj_out.weight"].shape))
    params["proj_out.bias"] = tensor(np.zeros(4))
    x = tensor(rng.standard_normal((1, 4, 5, 5)))
    assert np.array_equal(m_i(x, cfg, ParamView(params)).data, x.data)


def _delta(shape):
    kernel = np.zeros(shape)
    kernel[..., shape[-2] // 2, shape[-1] // 2] = 1.0
    return kernel


def test_attention_conv_with_delta_kernels_is_identity(rng, small_cfg):
    cfg = small_cfg(shuffle_groups=1)
    c = cfg.channels
    params = {
        "dw.weight": tensor(_delta((c, 1, cfg.dw_kernel, cfg.dw_kernel))), "dw.bias": tensor(np.zeros(c)),
        "dwd.weight": tensor(_delta((c, 1, cfg.dwd_kernel, cfg.dwd_kernel))), "dwd.bias": tensor(np.zeros(c)),
        "pw.weight": tensor(np.eye(c).reshape(c, c, 1, 1)), "pw.bias": tensor(np.zeros(c)),
    }
    x = rng.standard_normal((2, 4, 6, 6))
    assert np.array_equal(attention_conv(tensor(x), cfg, ParamView(params)).data, x)


def test_f_conv_with_delta_kernel_is_identity(rng, small_cfg):
    cfg = small_cfg("hafidaf_conv")
    c = cfg.channels
    weight = np.zeros((2 * c, 2, 3, 3))
    for o in range(2 * c):
        weight[o, o % 2, 1, 1] = 1.0
    params = ParamView({"fconv.weight": tensor(weight), "fconv.bias": tensor(np.zeros(2 * c))})
    x = rng.standard_normal((1, c, 8, 6))
    assert np.abs(f_conv(tensor(x), cfg, params).data - x).max() < 1e-10


def test_gsmlp_param_count_closed_form():
    cfg = BlockConfig(channels=96, shuffle_groups=4, mask_groups=4, mlp_ratio=2)
    c, r, g = 96, 2, 4
    assert _count(gsmlp_specs(cfg)) == 2 * r * c * c // g + (r * c + c)


def test_ablation_kinds_are_exact_subconfigurations(rng, small_cfg):
    x = tensor(rng.standard_normal((1, 4, 5, 6)))
    aff = small_cfg("aff", mlp_ratio=0)
    p = _params(block_param_specs(aff), rng)
    from_block = afidaf_block(x, aff, p).data
    direct = (x + m_c(channel_norm(x, p, "norm2", aff.norm_eps), aff, p.child("mc"))).data
    assert np.array_equal(from_block, direct)

    idaf = small_cfg("idaf", mlp_ratio=0)
    p = _params(block_param_specs(idaf), rng)
    from_block = afidaf_block(x, idaf, p).data
    direct = (x + m_i(channel_norm(x, p, "norm1", idaf.norm_eps), idaf, p.child("mi"))).data
    assert np.array_equal(from_block, direct)


def test_mini_network_gradient(rng, small_cfg):
    first_cfg, second_cfg = small_cfg("afidaf"), small_cfg("aff")
    first = _params(block_param_specs(first_cfg), rng)
    second = _params(block_param_specs(second_cfg), rng)
    labels = [1, 3]

    def f(x):
        h = afidaf_block(afidaf_block(x, first_cfg, first), second_cfg, second)
        return softmax_cross_entropy(global_avg_pool(h), labels)

    assert grad_check(f, tensor(rng.standard_normal((2, 4, 4, 4)))) < 1e-5
