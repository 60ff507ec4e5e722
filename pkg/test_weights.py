# test_weights.py
import struct

import numpy as np
import pytest

from afidaf.models import ModelConfig, ParamStore, build, forward_eval
from afidaf.tensor import Tensor
from afidaf.weights import MAGIC, decode, encode, load_weights, restore, save_weights
from afidaf.utils import WeightFormatError


@pytest.fixture
def random_store(rng):
    store = ParamStore()
    for i in range(120):
        rank = int(rng.integers(0, 4))
        shape = tuple(int(n) for n in rng.integers(0 if i % 17 == 0 else 1, 5, size=rank))
        dtype = "f32" if i % 2 else "f64"
        store.add(f"layer{i}.w_ñ", Tensor(rng.standard_normal(shape), dtype=dtype))
    return store


def test_round_trip_is_bit_exact(random_store):
    decoded = decode(encode(random_store))
    assert list(decoded) == list(random_store)
    for name, t in random_store.items():
        other = decoded[name]
        assert other.shape == t.shape
        assert other.dtype == t.dtype
        assert other.data.tobytes() == t.data.tobytes()


def test_header_layout(random_store):
    blob = encode(random_store)
    assert blob[:4] == MAGIC
    assert struct.unpack_from("<II", blob, 4) == (1, 120)


def test_bad_crc_reports_checksum_mismatch(random_store):
    blob = bytearray(encode(random_store))
    blob[40] ^= 0xFF
    with pytest.raises(WeightFormatError, match="checksum mismatch"):
        decode(bytes(blob))


def test_bad_magic(random_store):
    blob = b"XXXX" + encode(random_store)[4:]
    with pytest.raises(WeightFormatError, match="magic"):
        decode(blob)


def test_unsupported_version(random_store):
    blob = bytearray(encode(random_store))
    blob[4:8] = struct.pack("<I", 9)
    with pytest.raises(WeightFormatError):
        decode(bytes(blob))


@pytest.mark.parametrize("cut", [3, 11, 200])
def test_truncated_file(random_store, cut):
    blob = encode(random_store)
    with pytest.raises(WeightFormatError):
        decode(blob[:cut] if cut < 12 else blob[:-cut])


def test_save_and_load(tmp_path, random_store):
    path = tmp_path / "w.afwt"
    save_weights(random_store, path)
    assert load_weights(path).checksum() == random_store.checksum()


def test_restore_reproduces_model_outputs(tmp_path, rng):
    config = ModelConfig.preset("narrow")
    model = build(config, seed=2, dtype="f32")
    path = tmp_path / "narrow.afwt"
    save_weights(model.params, path)
    restored = restore(config, load_weights(path))
    batch = rng.standard_normal((3, 3, 32, 32))
    assert np.array_equal(forward_eval(model, batch).data, forward_eval(restored, batch).data)


def test_restore_rejects_other_model():
    store = build(ModelConfig.preset("narrow"), seed=0, dtype="f32").params
    with pytest.raises(WeightFormatError):
        restore(ModelConfig.preset("afidaf-t"), store)


def test_restore_rejects_mixed_dtypes():
    config = ModelConfig.preset("narrow")
    params = build(config, seed=0, dtype="f32").params
    first = next(iter(params))
    mixed = ParamStore((name, t.astype("f64") if name == first else t) for name, t in params.items())
    with pytest.raises(WeightFormatError):
        restore(config, mixed)
