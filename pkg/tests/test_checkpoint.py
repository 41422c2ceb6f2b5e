import json
import struct

import numpy as np
import pytest

from fundusnet.checkpoint import MAGIC, CheckpointError, atomic_write, checkpoint_load, checkpoint_save
from fundusnet.models import Model, preset


@pytest.fixture(scope="module")
def model():
    return Model(preset("cnn6-tiny"), seed=5)


def test_round_trip_is_bit_exact(model):
    data = checkpoint_save(model, {"seed": 5, "batch_size": 16})
    loaded, meta = checkpoint_load(data)
    assert meta == {"seed": 5, "batch_size": 16}
    assert loaded.config == model.config
    assert list(loaded.params) == list(model.params)
    for k in model.params:
        assert model.params[k].tobytes() == loaded.params[k].tobytes()
    assert checkpoint_save(loaded, meta) == data


def test_round_trip_with_batchnorm_buffers():
    m = Model(preset("resnet50-w8"), seed=1)
    m.params["stem_bn.running_var"] = m.params["stem_bn.running_var"] * 1.7
    loaded, meta = checkpoint_load(checkpoint_save(m))
    assert meta == {}
    assert all(np.array_equal(loaded.params[k], m.params[k]) for k in m.params)


def test_layout_header(model):
    data = checkpoint_save(model)
    assert data[:4] == MAGIC == b"MDGC"
    version, n = struct.unpack_from("<II", data, 4)
    assert version == 1
    arch = json.loads(data[12:12 + n])
    assert arch["name"] == "cnn6-tiny"


def test_bad_magic(model):
    data = bytearray(checkpoint_save(model))
    data[0] ^= 0xFF
    with pytest.raises(CheckpointError, match="bad magic"):
        checkpoint_load(bytes(data))


def test_truncation_names_tensor(model):
    data = checkpoint_save(model)
    with pytest.raises(CheckpointError, match="logits.bias"):
        checkpoint_load(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_load(data[:10])


def test_trailing_bytes_rejected(model):
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_load(checkpoint_save(model) + b"\0")


def test_shape_mismatch_names_tensor(model):
    data = checkpoint_save(model)
    name = b"conv1.weight"
    at = data.index(name) + len(name) + 1  # skip name and rank byte
    forged = data[:at] + struct.pack("<I", 9) + data[at + 4:]
    with pytest.raises(CheckpointError, match="conv1.weight"):
        checkpoint_load(forged)


def test_atomic_write_replaces_and_cleans_up(tmp_path):
    target = tmp_path / "sub" / "x.bin"
    atomic_write(target, b"one")
    atomic_write(target, b"two")
    assert target.read_bytes() == b"two"
    assert [p.name for p in target.parent.iterdir()] == ["x.bin"]
