"""
Tests for checkpoint encoding and model persistence.
"""
import struct

import numpy as np
import pytest

from app.core.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from app.core.exceptions import CheckpointError
from app.models.networks import Discriminator, Generator


def test_round_trip_is_bit_exact(rng, tmp_path):
    tensors = {
        "weight": rng.standard_normal((3, 4)),
        "bias": np.array([np.pi, -0.0, 1e-300]),
        "scalar_like": np.array([[5.0]]),
    }
    path = save_checkpoint(tmp_path / "nested" / "model.ckpt", tensors)
    restored = load_checkpoint(path)
    assert list(restored) == list(tensors)
    for name, value in tensors.items():
        assert restored[name].shape == value.shape
        assert restored[name].tobytes() == value.astype("<f8").tobytes()


def test_header_layout():
    payload = encode_checkpoint({"a": np.zeros(2)})
    assert payload.startswith(MAGIC)
    version, count, name_len = struct.unpack_from("<III", payload, len(MAGIC))
    assert (version, count, name_len) == (1, 1, 1)


def test_bad_magic():
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"NOTACKPT" + b"\x00" * 8)


def test_unsupported_version():
    payload = bytearray(encode_checkpoint({"a": np.zeros(1)}))
    payload[len(MAGIC)] = 9
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(bytes(payload))


def test_truncated_payload():
    payload = encode_checkpoint({"a": np.ones((2, 2))})
    with pytest.raises(CheckpointError, match="truncated"):
        decode_checkpoint(payload[:-3])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_module_save_load(rng, tmp_path, tiny_config):
    generator = Generator(1, 3, tiny_config, rng)
    path = tmp_path / "g.ckpt"
    generator.save(path)
    clone = Generator(1, 3, tiny_config, np.random.default_rng(99))
    clone.load(path)
    for name, value in generator.state_dict().items():
        np.testing.assert_array_equal(clone.state_dict()[name], value)


def test_load_rejects_other_architecture(rng, tmp_path, tiny_config):
    Generator(1, 3, tiny_config, rng).save(tmp_path / "g.ckpt")
    discriminator = Discriminator(1, 3, tiny_config, rng)
    with pytest.raises(CheckpointError, match="parameter names differ"):
        discriminator.load(tmp_path / "g.ckpt")
