# test_train.py
import csv
import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest

import afidaf.train as train_module
from afidaf.config import Config
from afidaf.models import ModelConfig, ParamStore, build
from afidaf.oracles import adamw_reference
from afidaf.tensor import tensor
from afidaf.train import (AdamWState, RunConfig, SyntheticDataset, TrainConfig, adamw_step, cosine_lr, decays,
                          smoothed, total_steps, train_loop)
from afidaf.utils import ConfigError, ContractError, NumericError, TrainingDivergedError

DEFAULT_RUN = os.path.join(Config.CONFIG_DIR, "train-narrow.json")


def _tiny_dataset(**overrides):
    values = dict(num_classes=4, image_size=32, samples_per_class=4, seed=3)
    values.update(overrides)
    return SyntheticDataset(**values)


# --- SCHEDULER ---
def test_cosine_lr_endpoints():
    cfg = TrainConfig()
    assert cosine_lr(0, 200, cfg) == pytest.approx(2e-3)
    assert cosine_lr(200, 200, cfg) == pytest.approx(2e-4)
    assert cosine_lr(100, 200, cfg) == pytest.approx(1.1e-3)


def test_cosine_lr_out_of_range():
    with pytest.raises(ContractError):
        cosine_lr(201, 200, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(base_lr=1e-4, min_lr=1e-3)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})


# --- ADAMW ---
def test_zero_gradient_applies_only_decay():
    cfg = TrainConfig()
    store = ParamStore({"w.weight": tensor([1.0, -2.0]), "w.bias": tensor([0.5])})
    state = AdamWState.zeros(store)
    adamw_step(store, {"w.weight": np.zeros(2), "w.bias": np.zeros(1)}, state, 1e-2, cfg)
    assert np.allclose(store["w.weight"].data, np.array([1.0, -2.0]) * (1 - 1e-2 * 0.05), atol=1e-15)
    assert store["w.bias"].data[0] == 0.5


def test_first_step_closed_form():
    cfg = replace(TrainConfig(), weight_decay=0.0)
    store = ParamStore({"w.weight": tensor([1.0, 1.0])})
    state = AdamWState.zeros(store)
    grad = np.array([0.3, -4.0])
    adamw_step(store, {"w.weight": grad}, state, 1e-3, cfg)
    expected = 1.0 - 1e-3 * grad / (np.abs(grad) + cfg.eps)
    assert np.allclose(store["w.weight"].data, expected, atol=1e-15)


def test_quadratic_bowl_matches_scalar_reference(rng):
    cfg = TrainConfig()
    curvature = rng.uniform(0.5, 2.0, size=4)
    start = rng.standard_normal(4)
    store = ParamStore({"w.weight": tensor(start)})
    state = AdamWState.zeros(store)
    scalars = [[0, 0.0, 0.0] for _ in start]
    values = list(start)
    for _ in range(10):
        adamw_step(store, {"w.weight": curvature * store["w.weight"].data}, state, 5e-3, cfg)
        values = [adamw_reference(v, c * v, s, 5e-3, cfg.weight_decay, cfg.betas, cfg.eps)
                  for v, c, s in zip(values, curvature, scalars)]
        assert np.abs(store["w.weight"].data - np.array(values)).max() < 1e-10


def test_no_decay_for_norms_and_biases():
    assert decays("stages.0.blocks.0.mi.proj_in.weight")
    assert not decays("stages.0.blocks.0.norm1.gamma")
    assert not decays("head.norm.beta")
    assert not decays("head.fc.bias")


def test_non_finite_gradient_names_parameter():
    store = ParamStore({"head.fc.weight": tensor([1.0])})
    with pytest.raises(NumericError, match="head.fc.weight"):
        adamw_step(store, {"head.fc.weight": np.array([np.nan])}, AdamWState.zeros(store), 1e-3, TrainConfig())


# --- DATOS ---
def test_synthetic_dataset_is_deterministic():
    a, b = _tiny_dataset(), _tiny_dataset()
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, _tiny_dataset(seed=4).images)


def test_synthetic_dataset_balanced():
    data = _tiny_dataset(samples_per_class=5)
    assert data.images.shape == (20, 3, 32, 32)
    assert np.bincount(data.labels).tolist() == [5, 5, 5, 5]


def test_dataset_spec_round_trip():
    data = _tiny_dataset(mode="texture")
    again = SyntheticDataset.from_spec(data.spec)
    assert np.array_equal(again.images, data.images)


@pytest.mark.parametrize("spec", [
    "imagenet:classes=4",
    "synthetic:classes=4,colors=3",
    "synthetic:classes=four",
    "synthetic:mode=stripes",
])
def test_bad_data_spec(spec):
    with pytest.raises(ConfigError):
        SyntheticDataset.from_spec(spec)


def test_run_config_loads_packaged_file():
    run = RunConfig.load(DEFAULT_RUN)
    assert run.model.variant == "narrow"
    assert run.train.batch_size == 32
    assert total_steps(len(SyntheticDataset.from_spec(run.data)), run.train) == 200


# --- BUCLE ---
def test_train_loop_rejects_mismatched_dataset():
    model = build(ModelConfig.preset("narrow"), seed=0, dtype="f32")
    with pytest.raises(ConfigError):
        train_loop(model, _tiny_dataset(image_size=16), TrainConfig(epochs=1))


def test_learning_rate_trace_matches_schedule():
    model = build(ModelConfig.preset("narrow"), seed=0, dtype="f32")
    cfg = TrainConfig(epochs=2, batch_size=8)
    history = train_loop(model, _tiny_dataset(), cfg)
    total = total_steps(16, cfg)
    assert history.learning_rates == [cosine_lr(step, total, cfg) for step in range(total)]


def test_training_is_reproducible():
    cfg = TrainConfig(epochs=1, batch_size=8, seed=5)
    first = train_loop(build(ModelConfig.preset("narrow"), seed=5, dtype="f32"), _tiny_dataset(), cfg)
    second = train_loop(build(ModelConfig.preset("narrow"), seed=5, dtype="f32"), _tiny_dataset(), cfg)
    assert first.losses == second.losses
    assert first.final_accuracy == second.final_accuracy


def test_frozen_model_stays_at_chance():
    model = build(ModelConfig.preset("narrow"), seed=0, dtype="f32")
    before = model.params.checksum()
    history = train_loop(model, _tiny_dataset(), TrainConfig(epochs=2, batch_size=8, freeze=True))
    assert model.params.checksum() == before
    assert abs(np.mean(history.losses) - math.log(4)) < 0.1


def test_divergence_is_reported(monkeypatch):
    def exploding(logits, labels):
        raise NumericError("cross_entropy: se produjeron valores no finitos")

    monkeypatch.setattr(train_module, "softmax_cross_entropy", exploding)
    model = build(ModelConfig.preset("narrow"), seed=0, dtype="f32")
    with pytest.raises(TrainingDivergedError, match="paso 0"):
        train_loop(model, _tiny_dataset(), TrainConfig(epochs=1, batch_size=8))


def test_run_artifacts(tmp_path):
    model = build(ModelConfig.preset("narrow"), seed=0, dtype="f32")
    data = _tiny_dataset()
    history = train_loop(model, data, TrainConfig(epochs=1, batch_size=8), out_dir=tmp_path)
    for name in (Config.WEIGHTS_FILENAME, Config.MODEL_FILENAME, Config.METRICS_FILENAME, Config.SUMMARY_FILENAME):
        assert (tmp_path / name).exists()
    with open(tmp_path / Config.METRICS_FILENAME, newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["step", "lr", "loss", "acc"]
    assert len(rows) == len(history.steps) == 2
    summary = json.loads((tmp_path / Config.SUMMARY_FILENAME).read_text())
    assert summary["data"] == data.spec
    assert summary["checksum"] == model.params.checksum()
    assert summary["final_accuracy"] == history.final_accuracy


def test_smoothed_window():
    assert smoothed([1.0, 2.0, 3.0], window=5).tolist() == [1.0, 2.0, 3.0]
    assert smoothed([1.0, 3.0, 5.0, 7.0], window=2).tolist() == [2.0, 4.0, 6.0]


# --- CONVERGENCIA ---
@pytest.mark.slow
def test_narrow_afidaf_learns_synthetic_task():
    run = RunConfig.load(DEFAULT_RUN)
    model = build(run.model, seed=run.train.seed, dtype="f32")
    history = train_loop(model, SyntheticDataset.from_spec(run.data), run.train)
    assert len(history.steps) <= 200
    assert history.final_accuracy >= 0.95
    curve = smoothed(history.losses, window=20)
    assert np.all(np.diff(curve) <= 0)


@pytest.mark.slow
def test_image_filter_helps_on_local_texture():
    run = RunConfig.load(DEFAULT_RUN)
    data = SyntheticDataset.from_spec(run.data.replace("mode=mixed", "mode=texture"))
    aff = replace(run.model, variant="narrow-aff",
                  stages=tuple(replace(stage, kind="aff") for stage in run.model.stages))
    full = train_loop(build(run.model, seed=0, dtype="f32"), data, run.train)
    ablated = train_loop(build(aff, seed=0, dtype="f32"), data, run.train)
    assert full.final_accuracy >= ablated.final_accuracy
