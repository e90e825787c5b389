import struct
import zlib

import numpy as np
import pytest

from ksgan import checkpoint as ckpt
from ksgan.nn import adam_step, critic_spec, forward, generator_spec, init
from ksgan.targets import make_rng


def test_layout_by_hand():
    data = ckpt.encode({"b": np.array([1.5, -2.0]), "a": np.array(3.0)})
    expected = bytearray(b"KSGN" + struct.pack("<I", 1))
    expected += struct.pack("<I", 1) + b"a" + struct.pack("<I", 0) + struct.pack("<d", 3.0)
    expected += struct.pack("<I", 1) + b"b" + struct.pack("<II", 1, 2) + struct.pack("<2d", 1.5, -2.0)
    expected += struct.pack("<I", zlib.crc32(bytes(expected)))
    assert data == bytes(expected)


def test_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    entries = {"x": rng.normal(size=(3, 4)), "y.z": rng.normal(size=7), "s": np.array(np.pi)}
    path = tmp_path / "c.ksgn"
    ckpt.save(path, entries)
    back = ckpt.load(path)
    assert list(back) == sorted(entries)
    for k in entries:
        np.testing.assert_array_equal(back[k], entries[k])


def test_store_round_trip_with_adam_and_sn(tmp_path):
    spec = critic_spec(2, (5, 6), spectral_norm=True)
    store = init(spec, make_rng(1))
    forward(store, spec, np.zeros((1, 2)))
    adam_step(store, {k: np.ones_like(v) for k, v in store.params.items()})
    path = tmp_path / "c.ksgn"
    ckpt.save(path, ckpt.store_entries("critic", spec, store))
    spec2, store2 = ckpt.restore_store(ckpt.load(path), "critic")
    assert spec2 == spec
    assert store2 == store


def test_generator_spec_restored():
    spec = generator_spec(8, (4, 4), 2)
    store = init(spec, make_rng(0))
    spec2, _ = ckpt.restore_store(ckpt.store_entries("generator", spec, store), "generator")
    assert spec2 == spec


@pytest.mark.parametrize("offset", [9, 20, -5])
def test_flipped_byte_is_checksum_mismatch(offset):
    data = bytearray(ckpt.encode({"w": np.arange(6.0).reshape(2, 3)}))
    data[offset] ^= 0x40
    with pytest.raises(ckpt.CheckpointError, match="checksum mismatch"):
        ckpt.decode(bytes(data))


def test_bad_magic():
    data = bytearray(ckpt.encode({"w": np.zeros(2)}))
    data[0:4] = b"NOPE"
    with pytest.raises(ckpt.CheckpointError, match="magic"):
        ckpt.decode(bytes(data))


def test_missing_network_is_reported():
    with pytest.raises(ckpt.CheckpointError, match="generator"):
        ckpt.restore_store({}, "generator")
