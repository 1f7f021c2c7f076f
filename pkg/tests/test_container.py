"""Container round-trips, a from-scratch byte-layout oracle, and corruption."""

import struct
import zlib

import numpy as np
import pytest

from legopack import (
    BadMagic,
    ChecksumMismatch,
    DatasetBundle,
    LayerSpec,
    ModelBundle,
    Role,
    Tensor,
    TrailingGarbage,
    TruncatedFile,
    UnsupportedVersion,
    ValidationError,
    decode_dataset,
    decode_model,
    encode_dataset,
    encode_model,
    model_param_count,
    read_model,
    write_model,
)
from legopack.errors import IoFailure

from conftest import conv_model, dense_model, rng


def small_dataset(n=6, seed=3):
    g = rng(seed)
    inputs = g.standard_normal((n, 1, 8, 8)).astype(np.float32)
    labels = g.integers(0, 10, size=n).astype(np.uint32)
    return DatasetBundle(Tensor("inputs", Role.OTHER, inputs), labels, 10)


class TestRoundTrip:
    def test_model_bytes_roundtrip(self):
        model = conv_model(seed=5)
        assert decode_model(encode_model(model)) == model

    def test_dense_model_roundtrip(self):
        model = dense_model(seed=9)
        assert decode_model(encode_model(model)) == model

    def test_model_file_roundtrip(self, tmp_path):
        model = dense_model(seed=2)
        path = tmp_path / "m.lgtw"
        write_model(model, path)
        assert read_model(path) == model

    def test_dataset_roundtrip(self):
        ds = small_dataset()
        out = decode_dataset(encode_dataset(ds))
        assert out.num_classes == ds.num_classes
        assert np.array_equal(out.labels, ds.labels)
        assert out.inputs == ds.inputs

    def test_encoding_is_deterministic(self):
        model = conv_model(seed=5)
        assert encode_model(model) == encode_model(model)

    def test_missing_file_is_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            read_model(tmp_path / "nope.lgtw")


class TestByteLayoutOracle:
    """Parse encoder output with independent struct code, no shared reader."""

    def test_minimal_model_layout_by_hand(self):
        # one 1x1 tensor holding 1.5f, no manifest: every byte accounted for
        model = ModelBundle((Tensor("w", Role.WEIGHT, np.array([[1.5]], np.float32)),))
        raw = encode_model(model)
        expected_body = (
            struct.pack("<I", 1)              # layer count
            + struct.pack("<H", 1) + b"w"     # name
            + bytes([0, 0, 2])                # role=WEIGHT, dtype=f32, ndim=2
            + struct.pack("<II", 1, 1)        # dims
            + struct.pack("<f", 1.5)          # payload
            + struct.pack("<I", 0)            # empty manifest
        )
        assert raw == b"LGTW" + struct.pack("<H", 1) + expected_body + struct.pack(
            "<I", zlib.crc32(expected_body)
        )

    def test_model_header_fields(self):
        model = dense_model(dims=(8, 4), seed=1, bias=False)
        raw = encode_model(model)
        assert raw[:4] == b"LGTW"
        (version,) = struct.unpack("<H", raw[4:6])
        assert version == 1
        (layer_count,) = struct.unpack("<I", raw[6:10])
        assert layer_count == 1
        (name_len,) = struct.unpack("<H", raw[10:12])
        assert raw[12 : 12 + name_len].decode() == "fc0.w"
        role, dtype, ndim = raw[12 + name_len : 15 + name_len]
        assert (role, dtype, ndim) == (Role.WEIGHT, 0, 2)
        dims = struct.unpack("<II", raw[15 + name_len : 23 + name_len])
        assert dims == (4, 8)
        payload = np.frombuffer(raw, "<f4", count=32, offset=23 + name_len)
        assert np.array_equal(payload.reshape(4, 8), model.layers[0].data)

    def test_crc_covers_body_only(self):
        raw = encode_model(dense_model(seed=0))
        (stored,) = struct.unpack("<I", raw[-4:])
        assert stored == zlib.crc32(raw[6:-4])

    def test_dataset_header_fields(self):
        ds = small_dataset(n=6)
        raw = encode_dataset(ds)
        assert raw[:4] == b"LGTD"
        n, num_classes = struct.unpack("<II", raw[6:14])
        assert (n, num_classes) == (6, 10)
        assert raw[14] == 3  # sample rank
        assert struct.unpack("<III", raw[15:27]) == (1, 8, 8)


class TestCorruption:
    def test_every_single_byte_flip_is_rejected(self):
        raw = bytearray(encode_model(dense_model(dims=(8, 4), seed=4, bias=False)))
        for pos in range(len(raw)):
            bad = bytearray(raw)
            bad[pos] ^= 0x5A
            with pytest.raises((BadMagic, UnsupportedVersion, ChecksumMismatch)):
                decode_model(bytes(bad))

    def test_truncation_rejected(self):
        raw = encode_model(dense_model(seed=4))
        for cut in (0, 5, 9, len(raw) // 2, len(raw) - 1):
            with pytest.raises((TruncatedFile, ChecksumMismatch)):
                decode_model(raw[:cut])

    def test_appended_bytes_rejected(self):
        raw = encode_model(dense_model(seed=4))
        with pytest.raises(ChecksumMismatch):
            decode_model(raw + b"\x00")

    def test_internal_trailing_garbage_rejected(self):
        # craft a file with valid CRC but unread body bytes
        model = ModelBundle((Tensor("w", Role.WEIGHT, np.array([[1.0]], np.float32)),))
        raw = encode_model(model)
        body = raw[6:-4] + b"\xab"
        crafted = raw[:6] + body + struct.pack("<I", zlib.crc32(body))
        with pytest.raises(TrailingGarbage):
            decode_model(crafted)

    def test_wrong_magic_named_first(self):
        raw = encode_model(dense_model(seed=4))
        with pytest.raises(BadMagic):
            decode_model(b"NOPE" + raw[4:])


class TestValidation:
    def test_duplicate_names_rejected(self):
        t = Tensor("w", Role.WEIGHT, np.ones((2, 2), np.float32))
        with pytest.raises(ValidationError):
            ModelBundle((t, Tensor("w", Role.BIAS, np.ones(2, np.float32))))

    def test_manifest_unknown_tensor_rejected(self):
        with pytest.raises(ValidationError):
            ModelBundle(
                (Tensor("w", Role.WEIGHT, np.ones((2, 2), np.float32)),),
                (LayerSpec("dense", in_dim=2, out_dim=2, weight_name="ghost"),),
            )

    def test_manifest_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            ModelBundle(
                (Tensor("w", Role.WEIGHT, np.ones((2, 2), np.float32)),),
                (LayerSpec("dense", in_dim=3, out_dim=2, weight_name="w"),),
            )

    def test_pooling_spec_must_not_reference_tensors(self):
        with pytest.raises(ValidationError):
            LayerSpec("relu", weight_name="w")

    def test_labels_below_num_classes(self):
        g = rng(0)
        inputs = Tensor("inputs", Role.OTHER, g.standard_normal((3, 4)).astype(np.float32))
        with pytest.raises(ValidationError):
            DatasetBundle(inputs, np.array([0, 1, 9], np.uint32), 5)

    def test_tensor_data_is_read_only(self):
        t = Tensor("w", Role.WEIGHT, np.ones((2, 2), np.float32))
        with pytest.raises(ValueError):
            t.data[0, 0] = 9.0

    def test_param_count_is_weights_only(self):
        model = conv_model(seed=0)
        want = 8 * 1 * 2 * 2 + 16 * 8 * 2 * 2 + 12 * 64
        assert model_param_count(model) == want
