#!/usr/bin/env python3
"""
Codec tests: clipping, fixed-point encoding, decoding sums and gradient files.
"""

import sys

import numpy as np
import pytest

import config
from codec import (
    CodecConfig,
    GradientFileReader,
    GradientFileWriter,
    clip,
    decode_sum,
    encode,
    flatten,
    manifest_path,
    read_manifest,
    unflatten,
    write_gradient_file,
)
from errors import GradientFileError, OverflowSuspectError, ParameterError, ShapeError
from field import get_field

FIELD = get_field(config.LWE_PRESETS["a"][1])
CFG = CodecConfig()


def test_clip_scales_only_long_vectors():
    g = np.array([3.0, 4.0])
    assert np.allclose(clip(g, 10.0), g)
    assert np.allclose(clip(g, 1.0), [0.6, 0.8])
    assert np.linalg.norm(clip(np.full(100, 7.0), 5.0)) == pytest.approx(5.0)
    with pytest.raises(ParameterError):
        clip(g, 0.0)


def test_encode_rounds_half_away_from_zero():
    quarter = CodecConfig(scale=4)
    enc = encode(np.array([0.125, -0.125, 0.375, -0.375, 0.25]), quarter)
    assert (enc.elements - quarter.offset).tolist() == [1, -1, 2, -2, 1]
    enc = encode(np.array([1.23456, -1.23454]), CFG)
    assert (enc.elements - CFG.offset).tolist() == [12346, -12345]
    assert enc.clamped == 0 and enc.m == 2


def test_encode_clamps_and_reports(caplog):
    enc = encode(np.array([3.2767, 3.2768, -3.2768, -3.3, 100.0]), CFG)
    assert (enc.elements - CFG.offset).tolist() == [32767, 32767, -32768, -32768, 32767]
    assert enc.clamped == 3
    assert "clamped 3" in caplog.text
    assert enc.elements.min() >= 0 and enc.elements.max() < 1 << 16


def test_encode_rejects_bad_input():
    with pytest.raises(ParameterError):
        encode(np.array([np.nan]), CFG)
    with pytest.raises(ParameterError):
        encode(np.array([1.0]), CFG, get_field(65521))


def test_decode_sum_recovers_real_total():
    rng = np.random.default_rng(1)
    grads = rng.uniform(-3.0, 3.0, size=(40, 50))
    V = FIELD.sum([encode(g, CFG, FIELD).elements for g in grads])
    total = decode_sum(V, 40, CFG, FIELD)
    assert np.max(np.abs(total - grads.sum(axis=0))) <= 40 * 0.5 / CFG.scale + 1e-12


def test_decode_sum_with_small_noise():
    enc = encode(np.array([1.0, -2.0]), CFG, FIELD).elements
    noisy = FIELD.add(FIELD.sum([enc, enc]), FIELD.from_signed(np.array([3, -4])))
    total = decode_sum(noisy, 2, CFG, FIELD, noise_sigma=0.001)
    assert np.allclose(total, [2.0003, -4.0004])


def test_decode_sum_limits():
    with pytest.raises(ParameterError):
        decode_sum(np.zeros(3), 479, CFG, FIELD)
    decode_sum(np.full(3, 478 * CFG.offset), 478, CFG, FIELD)
    with pytest.raises(ParameterError):
        decode_sum(np.zeros(3), 0, CFG, FIELD)
    # a value far outside k * 3.2768 means the sum wrapped
    wrapped = np.array([2 * CFG.offset + 1_000_000])
    with pytest.raises(OverflowSuspectError):
        decode_sum(wrapped, 2, CFG, FIELD)


def test_flatten_round_trip_keeps_shapes():
    tensors = [np.arange(6.0).reshape(2, 3), np.array([7.0]), np.ones((2, 1, 2))]
    vector, manifest = flatten(tensors)
    assert vector.shape == (11,) and manifest == [(2, 3), (1,), (2, 1, 2)]
    back = unflatten(vector, manifest)
    assert all(np.array_equal(a, b) for a, b in zip(back, tensors))
    with pytest.raises(ShapeError):
        unflatten(vector[:-1], manifest)


def test_gradient_file_round_trip(tmp_path):
    path = tmp_path / "grads.bin"
    rows = np.random.default_rng(2).normal(size=(5, 7)).astype(np.float32)
    assert write_gradient_file(path, rows, manifest=[(7,)]) == 5
    assert path.stat().st_size == 17 + 5 * 7 * 4
    reader = GradientFileReader(path)
    assert (len(reader), reader.m, reader.manifest) == (5, 7, [(7,)])
    assert np.array_equal(reader.read(3), rows[3])
    assert np.array_equal(np.vstack(list(reader)), rows)
    with pytest.raises(IndexError):
        reader.read(5)
    assert manifest_path(path).name == "grads.bin.manifest"


def test_gradient_file_writer_checks_length(tmp_path):
    with GradientFileWriter(tmp_path / "g.bin", 3) as writer:
        writer.write(np.zeros(3))
        with pytest.raises(ShapeError):
            writer.write(np.zeros(4))
    assert len(GradientFileReader(tmp_path / "g.bin")) == 1
    assert read_manifest(tmp_path / "g.bin") == []


def test_gradient_file_errors_report_offsets(tmp_path):
    path = tmp_path / "g.bin"
    write_gradient_file(path, np.ones((3, 4)))
    data = path.read_bytes()

    truncated = tmp_path / "short.bin"
    truncated.write_bytes(data[:17 + 4 * 4 + 10])
    with pytest.raises(GradientFileError) as err:
        GradientFileReader(truncated)
    assert err.value.offset == 17 + 16

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"NOTGRADS" + data[8:])
    with pytest.raises(GradientFileError) as err:
        GradientFileReader(bad_magic)
    assert err.value.offset == 0

    bad_version = tmp_path / "version.bin"
    bad_version.write_bytes(data[:8] + b"\x09" + data[9:])
    with pytest.raises(GradientFileError) as err:
        GradientFileReader(bad_version)
    assert err.value.offset == 8

    trailing = tmp_path / "trailing.bin"
    trailing.write_bytes(data + b"\x00")
    with pytest.raises(GradientFileError):
        GradientFileReader(trailing)

    header_only = tmp_path / "tiny.bin"
    header_only.write_bytes(data[:5])
    with pytest.raises(GradientFileError):
        GradientFileReader(header_only)


def main():
    tests = [(name, func) for name, func in globals().items()
             if name.startswith("test_") and func.__code__.co_argcount == 0]
    failed = 0
    for name, func in tests:
        try:
            func()
            print(f"  ✓ {name}")
        except Exception as e:
            failed += 1
            print(f"  ✗ {name}: {e}")
    print(f"\n{len(tests) - failed}/{len(tests)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
