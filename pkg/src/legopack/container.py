"""Model, dataset, and layer-spec types plus the LGTW/LGTD binary containers.

Byte-level layouts are documented in docs/FORMATS.md. All multi-byte integers
are little-endian, floats are IEEE-754 binary32, and every file ends with a
CRC-32 (zlib polynomial) computed over the bytes between the version field and
the checksum itself.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    IoFailure,
    TrailingGarbage,
    TruncatedFile,
    UnsupportedVersion,
    ValidationError,
)

MAGIC_MODEL = b"LGTW"
MAGIC_DATASET = b"LGTD"
FORMAT_VERSION = 1
DTYPE_F32 = 0
WORDLENGTH = 32  # bits per stored value; f32 is the only dtype in format v1


class Role(IntEnum):
    WEIGHT = 0
    BIAS = 1
    BATCHNORM_PARAM = 2
    OTHER = 3


# LayerSpec kind tags as serialized in the arch manifest.
KIND_DENSE = "dense"
KIND_CONV2D = "conv2d"
KIND_RELU = "relu"
KIND_MAXPOOL2D = "maxpool2d"
KIND_FLATTEN = "flatten"

_KIND_TAGS = {
    KIND_DENSE: 0,
    KIND_CONV2D: 1,
    KIND_RELU: 2,
    KIND_MAXPOOL2D: 3,
    KIND_FLATTEN: 4,
}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


@dataclass(frozen=True)
class Tensor:
    """A named f32 array with a storage role.

    `data` is held as a read-only, C-contiguous float32 ndarray; `shape` is
    whatever the array says it is.
    """

    name: str
    role: Role
    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim == 0:
            raise ValidationError(f"tensor {self.name!r}: shape must be non-empty")
        if any(d < 1 for d in arr.shape):
            raise ValidationError(f"tensor {self.name!r}: every dim must be >= 1")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "role", Role(self.role))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.role == other.role
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class LayerSpec:
    """One record of the architecture manifest.

    Only the fields relevant to `kind` are set; the rest stay None. Tensor
    references are by name into the bundle's layer list.
    """

    kind: str
    in_dim: int | None = None
    out_dim: int | None = None
    in_ch: int | None = None
    out_ch: int | None = None
    kh: int | None = None
    kw: int | None = None
    stride: int | None = None
    padding: int | None = None
    weight_name: str | None = None
    bias_name: str | None = None

    def __post_init__(self):
        if self.kind not in _KIND_TAGS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        required = {
            KIND_DENSE: ("in_dim", "out_dim", "weight_name"),
            KIND_CONV2D: ("in_ch", "out_ch", "kh", "kw", "stride", "weight_name"),
            KIND_MAXPOOL2D: ("kh", "kw", "stride"),
            KIND_RELU: (),
            KIND_FLATTEN: (),
        }[self.kind]
        for f in required:
            if getattr(self, f) is None:
                raise ValidationError(f"{self.kind} layer spec needs {f}")
        if self.kind in (KIND_RELU, KIND_FLATTEN, KIND_MAXPOOL2D):
            if self.weight_name or self.bias_name:
                raise ValidationError(f"{self.kind} layer spec must not reference tensors")


@dataclass(frozen=True)
class ModelBundle:
    """An ordered set of named tensors plus the manifest driving inference."""

    layers: tuple[Tensor, ...]
    arch_manifest: tuple[LayerSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "arch_manifest", tuple(self.arch_manifest))
        names = [t.name for t in self.layers]
        if len(set(names)) != len(names):
            raise ValidationError("layer names must be unique")
        by_name = {t.name: t for t in self.layers}
        for spec in self.arch_manifest:
            self._check_spec(spec, by_name)

    @staticmethod
    def _check_spec(spec: LayerSpec, by_name: dict[str, Tensor]) -> None:
        def resolve(name: str, expect_shape: tuple[int, ...]) -> None:
            if name not in by_name:
                raise ValidationError(f"manifest references unknown tensor {name!r}")
            got = by_name[name].shape
            if got != expect_shape:
                raise ValidationError(
                    f"tensor {name!r} has shape {got}, manifest expects {expect_shape}"
                )

        if spec.kind == KIND_DENSE:
            resolve(spec.weight_name, (spec.out_dim, spec.in_dim))
            if spec.bias_name:
                resolve(spec.bias_name, (spec.out_dim,))
        elif spec.kind == KIND_CONV2D:
            resolve(spec.weight_name, (spec.out_ch, spec.in_ch, spec.kh, spec.kw))
            if spec.bias_name:
                resolve(spec.bias_name, (spec.out_ch,))

    def tensor(self, name: str) -> Tensor:
        for t in self.layers:
            if t.name == name:
                return t
        raise KeyError(name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelBundle):
            return NotImplemented
        return self.layers == other.layers and self.arch_manifest == other.arch_manifest

    __hash__ = None


@dataclass(frozen=True)
class DatasetBundle:
    """Evaluation inputs of shape [N, ...] with one class label per sample."""

    inputs: Tensor
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        n = self.inputs.shape[0]
        if n < 1:
            raise ValidationError("dataset needs at least one sample")
        if labels.shape != (n,):
            raise ValidationError(f"expected {n} labels, got {labels.shape}")
        if self.num_classes < 1 or int(labels.max()) >= self.num_classes:
            raise ValidationError("every label must be < num_classes")

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])


def model_param_count(model: ModelBundle) -> int:
    """Parameter count P: element counts of weight-role tensors only."""
    return sum(t.size for t in model.layers if t.role == Role.WEIGHT)


# --- binary encoding ---------------------------------------------------------


class _Reader:
    """Cursor over an in-memory byte string; raises TruncatedFile on overrun."""

    def __init__(self, buf: bytes, start: int = 0, end: int | None = None):
        self.buf = buf
        self.pos = start
        self.end = len(buf) if end is None else end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, have {self.end - self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def name(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def f32_array(self, count: int, shape: tuple[int, ...]) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).reshape(shape)

    def u32_array(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<u4", count=count)

    def done(self) -> bool:
        return self.pos == self.end


def _put_name(out: bytearray, name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError(f"name too long: {name[:32]!r}...")
    out += struct.pack("<H", len(raw))
    out += raw


def _put_tensor_record(out: bytearray, t: Tensor) -> None:
    _put_name(out, t.name)
    out += struct.pack("<BBB", int(t.role), DTYPE_F32, t.data.ndim)
    out += struct.pack(f"<{t.data.ndim}I", *t.shape)
    out += t.data.astype("<f4", copy=False).tobytes()


def _take_tensor_record(r: _Reader) -> Tensor:
    name = r.name()
    role, dtype, ndim = r.u8(), r.u8(), r.u8()
    if dtype != DTYPE_F32:
        raise UnsupportedVersion(f"unknown dtype tag {dtype}")
    shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim)))
    count = int(np.prod(shape)) if shape else 0
    data = r.f32_array(count, shape)
    return Tensor(name, Role(role), data)


def _encode_manifest(manifest: tuple[LayerSpec, ...]) -> bytes:
    out = bytearray()
    for spec in manifest:
        body = bytearray()
        if spec.kind == KIND_DENSE:
            body += struct.pack("<II", spec.in_dim, spec.out_dim)
            _put_name(body, spec.weight_name)
            _put_name(body, spec.bias_name or "")
        elif spec.kind == KIND_CONV2D:
            body += struct.pack(
                "<6I", spec.in_ch, spec.out_ch, spec.kh, spec.kw, spec.stride, spec.padding or 0
            )
            _put_name(body, spec.weight_name)
            _put_name(body, spec.bias_name or "")
        elif spec.kind == KIND_MAXPOOL2D:
            body += struct.pack("<3I", spec.kh, spec.kw, spec.stride)
        out += struct.pack("<BI", _KIND_TAGS[spec.kind], len(body))
        out += body
    return bytes(out)


def _decode_manifest(raw: bytes) -> tuple[LayerSpec, ...]:
    r = _Reader(raw)
    specs = []
    while not r.done():
        tag = r.u8()
        length = r.u32()
        body = _Reader(r.take(length))
        kind = _TAG_KINDS.get(tag)
        if kind is None:
            raise UnsupportedVersion(f"unknown manifest record tag {tag}")
        if kind == KIND_DENSE:
            in_dim, out_dim = body.u32(), body.u32()
            wname, bname = body.name(), body.name()
            specs.append(
                LayerSpec(kind, in_dim=in_dim, out_dim=out_dim, weight_name=wname,
                          bias_name=bname or None)
            )
        elif kind == KIND_CONV2D:
            in_ch, out_ch, kh, kw, stride, padding = (body.u32() for _ in range(6))
            wname, bname = body.name(), body.name()
            specs.append(
                LayerSpec(kind, in_ch=in_ch, out_ch=out_ch, kh=kh, kw=kw, stride=stride,
                          padding=padding, weight_name=wname, bias_name=bname or None)
            )
        elif kind == KIND_MAXPOOL2D:
            specs.append(LayerSpec(kind, kh=body.u32(), kw=body.u32(), stride=body.u32()))
        else:
            specs.append(LayerSpec(kind))
        if not body.done():
            raise TrailingGarbage(f"manifest record {kind} has trailing bytes")
    return tuple(specs)


def _seal(magic: bytes, body: bytes) -> bytes:
    head = magic + struct.pack("<H", FORMAT_VERSION)
    crc = zlib.crc32(body)
    return head + body + struct.pack("<I", crc)


def _unseal(raw: bytes, magic: bytes) -> _Reader:
    if len(raw) < 10:
        raise TruncatedFile(f"file is only {len(raw)} bytes")
    if raw[:4] != magic:
        raise BadMagic(f"expected {magic!r}, found {raw[:4]!r}")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}")
    (stored,) = struct.unpack("<I", raw[-4:])
    actual = zlib.crc32(raw[6:-4])
    if stored != actual:
        raise ChecksumMismatch(f"crc32 {actual:#010x} != stored {stored:#010x}")
    return _Reader(raw, start=6, end=len(raw) - 4)


def encode_model(model: ModelBundle) -> bytes:
    """Canonical LGTW bytes; a pure function of the bundle."""
    body = bytearray()
    body += struct.pack("<I", len(model.layers))
    for t in model.layers:
        _put_tensor_record(body, t)
    manifest = _encode_manifest(model.arch_manifest)
    body += struct.pack("<I", len(manifest))
    body += manifest
    return _seal(MAGIC_MODEL, bytes(body))


def decode_model(raw: bytes) -> ModelBundle:
    r = _unseal(raw, MAGIC_MODEL)
    layer_count = r.u32()
    layers = tuple(_take_tensor_record(r) for _ in range(layer_count))
    manifest = _decode_manifest(r.take(r.u32()))
    if not r.done():
        raise TrailingGarbage(f"{r.end - r.pos} unread bytes before checksum")
    return ModelBundle(layers, manifest)


def encode_dataset(ds: DatasetBundle) -> bytes:
    body = bytearray()
    sample_shape = ds.inputs.shape[1:]
    body += struct.pack("<II", ds.n, ds.num_classes)
    body += struct.pack("<B", len(sample_shape))
    body += struct.pack(f"<{len(sample_shape)}I", *sample_shape)
    body += ds.inputs.data.astype("<f4", copy=False).tobytes()
    body += ds.labels.astype("<u4", copy=False).tobytes()
    return _seal(MAGIC_DATASET, bytes(body))


def decode_dataset(raw: bytes) -> DatasetBundle:
    r = _unseal(raw, MAGIC_DATASET)
    n, num_classes = r.u32(), r.u32()
    ndim = r.u8()
    sample_shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim)))
    count = n * int(np.prod(sample_shape)) if sample_shape else n
    inputs = r.f32_array(count, (n, *sample_shape))
    labels = r.u32_array(n)
    if not r.done():
        raise TrailingGarbage(f"{r.end - r.pos} unread bytes before checksum")
    return DatasetBundle(Tensor("inputs", Role.OTHER, inputs), labels, num_classes)


def _read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e


def _write_bytes(path: str | Path, raw: bytes) -> None:
    try:
        Path(path).write_bytes(raw)
    except OSError as e:
        raise IoFailure(str(e)) from e


def read_model(path: str | Path) -> ModelBundle:
    return decode_model(_read_bytes(path))


def write_model(model: ModelBundle, path: str | Path) -> None:
    _write_bytes(path, encode_model(model))


def read_dataset(path: str | Path) -> DatasetBundle:
    return decode_dataset(_read_bytes(path))


def write_dataset(ds: DatasetBundle, path: str | Path) -> None:
    _write_bytes(path, encode_dataset(ds))
