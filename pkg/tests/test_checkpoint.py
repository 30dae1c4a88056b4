"""Checkpoint format: round trips, integrity failures, and hash vectors."""

import struct

import numpy as np
import pytest

from emoalign.checkpoint import (MAGIC, VERSION, fnv1a64, load_tensors,
                                 save_tensors)
from emoalign.errors import CheckpointError


def test_fnv1a64_known_vectors():
    # published reference vectors for 64-bit FNV-1a
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def _sample_tensors():
    rng = np.random.default_rng(123)
    return {
        "encoder.conv1_w": rng.normal(size=(72, 8)),
        "encoder.conv1_b": np.zeros(8),
        "proj.w": rng.normal(size=(64, 32)) * 0.1,
        "log_tau": np.array([-2.6592600369327783]),
        "bank": rng.normal(size=(12, 8, 32)) * 0.02,
    }


def test_round_trip_names_shapes_and_quantization_bound(tmp_path):
    path = tmp_path / "model.ckpt"
    tensors = _sample_tensors()
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert list(loaded) == list(tensors)
    for name, arr in tensors.items():
        got = loaded[name]
        assert got.shape == arr.shape
        assert got.dtype == np.float64
        denom = np.maximum(np.abs(arr), 1e-30)
        assert (np.abs(got - arr) / denom).max() <= 2.0 ** -20


def test_saving_twice_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_tensors(a, _sample_tensors())
    save_tensors(b, _sample_tensors())
    assert a.read_bytes() == b.read_bytes()


def test_loaded_values_resave_identically(tmp_path):
    # f32 quantization is idempotent: save(load(save(x))) == save(x)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_tensors(a, _sample_tensors())
    save_tensors(b, load_tensors(a))
    assert a.read_bytes() == b.read_bytes()


def test_empty_directory_is_valid(tmp_path):
    path = tmp_path / "empty.ckpt"
    save_tensors(path, {})
    assert load_tensors(path) == {}


def test_bad_magic_names_expected_and_actual(tmp_path):
    path = tmp_path / "bad.ckpt"
    save_tensors(path, _sample_tensors())
    blob = bytearray(path.read_bytes())
    blob[:8] = b"NOTMAGIC"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="NOTMAGIC") as exc:
        load_tensors(path)
    assert MAGIC.decode() in str(exc.value)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    save_tensors(path, _sample_tensors())
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", VERSION + 9)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match=f"expected {VERSION}, actual {VERSION + 9}"):
        load_tensors(path)


def test_payload_corruption_reports_both_checksums(tmp_path):
    path = tmp_path / "bad.ckpt"
    save_tensors(path, _sample_tensors())
    blob = bytearray(path.read_bytes())
    blob[-100] ^= 0x40  # flip one payload bit
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum mismatch") as exc:
        load_tensors(path)
    assert "expected 0x" in str(exc.value) and "actual 0x" in str(exc.value)


def test_truncation_at_every_region_is_detected(tmp_path):
    path = tmp_path / "base.ckpt"
    save_tensors(path, _sample_tensors())
    blob = path.read_bytes()
    cut = tmp_path / "cut.ckpt"
    for keep in (4, 10, 30, len(blob) // 2, len(blob) - 9, len(blob) - 1):
        cut.write_bytes(blob[:keep])
        with pytest.raises(CheckpointError):
            load_tensors(cut)


def test_missing_file_is_a_checkpoint_error(tmp_path):
    with pytest.raises(CheckpointError, match="nowhere.ckpt"):
        load_tensors(tmp_path / "nowhere.ckpt")
