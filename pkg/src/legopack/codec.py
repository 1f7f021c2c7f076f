"""Bit-packed index streams, compression-ratio arithmetic, and the LGNC format.

Index streams are LSB-first little-endian: index i occupies bits
[i*bits, (i+1)*bits) of the stream, least significant bit first, and the final
byte is zero-padded. Each layer gets its own byte-aligned stream so layers can
be decoded independently.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .clustering import Codebook
from .container import (
    FORMAT_VERSION,
    LayerSpec,
    Role,
    Tensor,
    WORDLENGTH,
    _decode_manifest,
    _encode_manifest,
    _put_name,
    _put_tensor_record,
    _Reader,
    _take_tensor_record,
    _read_bytes,
    _write_bytes,
)
from .errors import (
    BadMagic,
    ChecksumMismatch,
    IndexOverflow,
    LengthMismatch,
    TrailingGarbage,
    TruncatedFile,
    UnsupportedVersion,
    ValidationError,
)

MAGIC_COMPRESSED = b"LGNC"


def bits_for_k(k: int) -> int:
    """ceil(log2 K), floored at 1 bit so K=1 stays decodable."""
    if k < 1:
        raise ValueError("K must be >= 1")
    return max(1, (k - 1).bit_length())


def packed_length(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def pack_indices(indices, bits: int) -> bytes:
    """Pack integers into an LSB-first little-endian bitstream."""
    if not 1 <= bits <= 32:
        raise ValueError("bits must be in 1..=32")
    arr = np.asarray(indices, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << bits)):
        raise IndexOverflow(f"index out of range for {bits}-bit packing")
    if arr.size == 0:
        return b""
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = (arr.astype(np.uint64)[:, None] >> shifts[None, :]) & np.uint64(1)
    return np.packbits(bitmat.astype(np.uint8).reshape(-1), bitorder="little").tobytes()


def _unpack_array(stream: bytes, count: int, bits: int) -> np.ndarray:
    if not 1 <= bits <= 32:
        raise ValueError("bits must be in 1..=32")
    if len(stream) != packed_length(count, bits):
        raise LengthMismatch(
            f"stream is {len(stream)} bytes, expected {packed_length(count, bits)} "
            f"for {count} x {bits}-bit indices"
        )
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    bitarr = np.unpackbits(np.frombuffer(stream, dtype=np.uint8), bitorder="little")
    bitmat = bitarr[: count * bits].reshape(count, bits).astype(np.uint64)
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    return (bitmat * weights[None, :]).sum(axis=1).astype(np.int64)


def unpack_indices(stream: bytes, count: int, bits: int) -> list[int]:
    """Exact inverse of pack_indices."""
    return _unpack_array(stream, count, bits).tolist()


@dataclass(frozen=True)
class CrBreakdown:
    """Eq-level size accounting for one compression configuration (bits)."""

    theoretical_cr: float
    compressed_bits: int
    codebook_bits: int
    index_bits: int
    raw_bits: int


def compute_cr(
    p_compressed: int, p_raw: int, k: int, b: int, wordlength: int = WORDLENGTH
) -> CrBreakdown:
    """Compression-ratio arithmetic for block-clustered storage.

    The headline theoretical_cr is b^2*wordlength / bits_per_index, i.e. the
    per-parameter ratio with the codebook ignored; compressed_bits is the full
    accounting: index streams + codebook + raw (uncompressed) parameters.
    """
    if k < 1 or b < 1 or wordlength < 1 or p_compressed < 0 or p_raw < 0:
        raise ValueError("arguments out of range")
    if p_compressed % (b * b):
        raise ValidationError(f"P_compressed={p_compressed} is not a multiple of b^2={b * b}")
    bits = bits_for_k(k)
    index_bits = (p_compressed // (b * b)) * bits
    codebook_bits = b * b * k * wordlength
    raw_bits = p_raw * wordlength
    return CrBreakdown(
        theoretical_cr=(b * b * wordlength) / bits,
        compressed_bits=index_bits + codebook_bits + raw_bits,
        codebook_bits=codebook_bits,
        index_bits=index_bits,
        raw_bits=raw_bits,
    )


def codebook_bytes(k: int, b: int, wordlength: int = WORDLENGTH) -> int:
    """On-disk size of the lego codebook itself, in bytes."""
    return (b * b * k * wordlength + 7) // 8


@dataclass(frozen=True)
class CompressedLayer:
    """One clustered weight layer: its tile grid and packed index stream."""

    layer_index: int
    name: str
    role: Role
    shape: tuple[int, ...]
    rows_b: int
    cols_b: int
    stream: bytes

    @property
    def block_count(self) -> int:
        return self.rows_b * self.cols_b


@dataclass(frozen=True)
class RawLayer:
    """A tensor stored verbatim (non-weight, or indivisible by b)."""

    layer_index: int
    tensor: Tensor


@dataclass(frozen=True)
class CompressedModel:
    """Codebook + per-layer index streams + verbatim tensors + manifest."""

    codebook: Codebook
    bits_per_index: int
    compressed_layers: tuple[CompressedLayer, ...]
    raw_layers: tuple[RawLayer, ...]
    arch_manifest: tuple[LayerSpec, ...] = ()
    wordlength: int = WORDLENGTH

    def __post_init__(self):
        object.__setattr__(self, "compressed_layers", tuple(self.compressed_layers))
        object.__setattr__(self, "raw_layers", tuple(self.raw_layers))
        object.__setattr__(self, "arch_manifest", tuple(self.arch_manifest))
        if self.bits_per_index != bits_for_k(self.codebook.k):
            raise ValidationError(
                f"bits_per_index {self.bits_per_index} != ceil(log2 {self.codebook.k})"
            )
        for cl in self.compressed_layers:
            want = packed_length(cl.block_count, self.bits_per_index)
            if len(cl.stream) != want:
                raise ValidationError(
                    f"layer {cl.name!r}: stream is {len(cl.stream)} bytes, expected {want}"
                )

    @property
    def block_count(self) -> int:
        return sum(cl.block_count for cl in self.compressed_layers)

    def layer_indices(self, cl: CompressedLayer) -> np.ndarray:
        idx = _unpack_array(cl.stream, cl.block_count, self.bits_per_index)
        if idx.size and idx.max() >= self.codebook.k:
            raise IndexOverflow(f"layer {cl.name!r}: index >= K={self.codebook.k}")
        return idx


def encode_compressed(cm: CompressedModel) -> bytes:
    """Canonical LGNC bytes; a pure function of the compressed model."""
    body = bytearray()
    body += struct.pack("<BIBB", cm.codebook.b, cm.codebook.k, cm.bits_per_index, cm.wordlength)
    body += cm.codebook.legos.astype("<f4", copy=False).tobytes()
    body += struct.pack("<I", len(cm.compressed_layers))
    for cl in cm.compressed_layers:
        body += struct.pack("<I", cl.layer_index)
        _put_name(body, cl.name)
        body += struct.pack("<BB", int(cl.role), len(cl.shape))
        body += struct.pack(f"<{len(cl.shape)}I", *cl.shape)
        body += struct.pack("<III", cl.rows_b, cl.cols_b, len(cl.stream))
        body += cl.stream
    body += struct.pack("<I", len(cm.raw_layers))
    for rl in cm.raw_layers:
        body += struct.pack("<I", rl.layer_index)
        _put_tensor_record(body, rl.tensor)
    manifest = _encode_manifest(cm.arch_manifest)
    body += struct.pack("<I", len(manifest))
    body += manifest
    head = MAGIC_COMPRESSED + struct.pack("<H", FORMAT_VERSION)
    return head + bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))


def decode_compressed(raw: bytes) -> CompressedModel:
    if len(raw) < 10:
        raise TruncatedFile(f"file is only {len(raw)} bytes")
    if raw[:4] != MAGIC_COMPRESSED:
        raise BadMagic(f"expected {MAGIC_COMPRESSED!r}, found {raw[:4]!r}")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}")
    (stored,) = struct.unpack("<I", raw[-4:])
    actual = zlib.crc32(raw[6:-4])
    if stored != actual:
        raise ChecksumMismatch(f"crc32 {actual:#010x} != stored {stored:#010x}")
    r = _Reader(raw, start=6, end=len(raw) - 4)

    b, k, bits, wordlength = r.u8(), r.u32(), r.u8(), r.u8()
    legos = r.f32_array(k * b * b, (k, b * b))
    codebook = Codebook(legos, b)
    compressed = []
    for _ in range(r.u32()):
        layer_index = r.u32()
        name = r.name()
        role = Role(r.u8())
        ndim = r.u8()
        shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim)))
        rows_b, cols_b, stream_len = r.u32(), r.u32(), r.u32()
        stream = r.take(stream_len)
        compressed.append(CompressedLayer(layer_index, name, role, shape, rows_b, cols_b, stream))
    raws = []
    for _ in range(r.u32()):
        layer_index = r.u32()
        raws.append(RawLayer(layer_index, _take_tensor_record(r)))
    manifest = _decode_manifest(r.take(r.u32()))
    if not r.done():
        raise TrailingGarbage(f"{r.end - r.pos} unread bytes before checksum")
    cm = CompressedModel(codebook, bits, tuple(compressed), tuple(raws), manifest, wordlength)
    for cl in cm.compressed_layers:
        cm.layer_indices(cl)  # raises IndexOverflow on any index >= K
    return cm


def read_compressed(path) -> CompressedModel:
    return decode_compressed(_read_bytes(path))


def write_compressed(cm: CompressedModel, path) -> None:
    _write_bytes(path, encode_compressed(cm))
