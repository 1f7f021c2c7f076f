"""Struct-level LGTW/LGTD writers and readers.

This module is deliberately independent of the legopack package: it encodes
the containers straight from the byte tables in docs/FORMATS.md so the two
implementations can be diffed against each other through the files alone.
"""

import struct
import zlib

import numpy as np

MAGIC_MODEL = b"LGTW"
MAGIC_DATASET = b"LGTD"
FORMAT_VERSION = 1
DTYPE_F32 = 0

ROLE_WEIGHT = 0
ROLE_BIAS = 1
ROLE_BATCHNORM_PARAM = 2
ROLE_OTHER = 3

_KIND_TAGS = {"dense": 0, "conv2d": 1, "relu": 2, "maxpool2d": 3, "flatten": 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def _put_name(out: bytearray, name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"name too long: {name[:32]!r}")
    out += struct.pack("<H", len(raw))
    out += raw


def _put_tensor(out: bytearray, name: str, role: int, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim == 0:
        raise ValueError(f"tensor {name!r} must have at least one axis")
    _put_name(out, name)
    out += struct.pack("<BBB", role, DTYPE_F32, arr.ndim)
    out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += arr.tobytes()


def _encode_manifest(manifest) -> bytes:
    """Entries are dicts with a 'kind' key, see docs/FORMATS.md."""
    out = bytearray()
    for entry in manifest:
        kind = entry["kind"]
        body = bytearray()
        if kind == "dense":
            body += struct.pack("<II", entry["in_dim"], entry["out_dim"])
            _put_name(body, entry["weight"])
            _put_name(body, entry.get("bias") or "")
        elif kind == "conv2d":
            body += struct.pack(
                "<6I",
                entry["in_ch"],
                entry["out_ch"],
                entry["kh"],
                entry["kw"],
                entry["stride"],
                entry.get("padding", 0),
            )
            _put_name(body, entry["weight"])
            _put_name(body, entry.get("bias") or "")
        elif kind == "maxpool2d":
            body += struct.pack("<3I", entry["kh"], entry["kw"], entry["stride"])
        elif kind not in ("relu", "flatten"):
            raise ValueError(f"unsupported manifest kind {kind!r}")
        out += struct.pack("<BI", _KIND_TAGS[kind], len(body))
        out += body
    return bytes(out)


def _seal(magic: bytes, body: bytes) -> bytes:
    return magic + struct.pack("<H", FORMAT_VERSION) + body + struct.pack("<I", zlib.crc32(body))


def encode_lgtw(tensors, manifest) -> bytes:
    """`tensors` is a sequence of (name, role, ndarray) in storage order."""
    body = bytearray()
    body += struct.pack("<I", len(tensors))
    for name, role, data in tensors:
        _put_tensor(body, name, role, data)
    blob = _encode_manifest(manifest)
    body += struct.pack("<I", len(blob))
    body += blob
    return _seal(MAGIC_MODEL, bytes(body))


def encode_lgtd(inputs: np.ndarray, labels: np.ndarray, num_classes: int) -> bytes:
    inputs = np.ascontiguousarray(inputs, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<u4")
    if inputs.ndim < 2:
        raise ValueError("inputs must be [n, ...]")
    n = inputs.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got {labels.shape}")
    if labels.size and int(labels.max()) >= num_classes:
        raise ValueError("every label must be < num_classes")
    body = bytearray()
    body += struct.pack("<II", n, num_classes)
    sample_shape = inputs.shape[1:]
    body += struct.pack("<B", len(sample_shape))
    body += struct.pack(f"<{len(sample_shape)}I", *sample_shape)
    body += inputs.tobytes()
    body += labels.tobytes()
    return _seal(MAGIC_DATASET, bytes(body))


class _Cursor:
    def __init__(self, raw: bytes, start: int, end: int):
        self.raw = raw
        self.pos = start
        self.end = end

    def take(self, count: int) -> bytes:
        if self.pos + count > self.end:
            raise ValueError("record runs past the end of the body")
        out = self.raw[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")


def _open(raw: bytes, magic: bytes) -> _Cursor:
    if len(raw) < 10:
        raise ValueError("file too short")
    if raw[:4] != magic:
        raise ValueError(f"bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<H", raw[4:6])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported version {version}")
    (stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[6:-4]) != stored:
        raise ValueError("checksum mismatch")
    return _Cursor(raw, 6, len(raw) - 4)


def decode_lgtw(raw: bytes):
    """Returns (tensors, manifest) in the same shapes encode_lgtw takes."""
    c = _open(raw, MAGIC_MODEL)
    (count,) = c.unpack("<I")
    tensors = []
    for _ in range(count):
        name = c.name()
        role, dtype, ndim = c.unpack("<BBB")
        if dtype != DTYPE_F32:
            raise ValueError(f"unknown dtype tag {dtype}")
        shape = c.unpack(f"<{ndim}I")
        total = int(np.prod(shape))
        data = np.frombuffer(c.take(4 * total), dtype="<f4").reshape(shape)
        tensors.append((name, role, data))
    (blob_len,) = c.unpack("<I")
    inner = _Cursor(c.raw, c.pos, c.pos + blob_len)
    c.pos += blob_len
    manifest = []
    while inner.pos < inner.end:
        tag, body_len = inner.unpack("<BI")
        kind = _TAG_KINDS.get(tag)
        if kind is None:
            raise ValueError(f"unknown manifest tag {tag}")
        stop = inner.pos + body_len
        entry = {"kind": kind}
        if kind == "dense":
            entry["in_dim"], entry["out_dim"] = inner.unpack("<II")
            entry["weight"] = inner.name()
            entry["bias"] = inner.name() or None
        elif kind == "conv2d":
            keys = ("in_ch", "out_ch", "kh", "kw", "stride", "padding")
            entry.update(zip(keys, inner.unpack("<6I")))
            entry["weight"] = inner.name()
            entry["bias"] = inner.name() or None
        elif kind == "maxpool2d":
            entry["kh"], entry["kw"], entry["stride"] = inner.unpack("<3I")
        if inner.pos != stop:
            raise ValueError(f"manifest entry {kind!r} has wrong length")
        manifest.append(entry)
    if c.pos != c.end:
        raise ValueError("trailing bytes in body")
    return tensors, manifest


def decode_lgtd(raw: bytes):
    """Returns (inputs, labels, num_classes)."""
    c = _open(raw, MAGIC_DATASET)
    n, num_classes = c.unpack("<II")
    (ndim,) = c.unpack("<B")
    sample_shape = c.unpack(f"<{ndim}I")
    per = int(np.prod(sample_shape))
    inputs = np.frombuffer(c.take(4 * per * n), dtype="<f4").reshape((n, *sample_shape))
    labels = np.frombuffer(c.take(4 * n), dtype="<u4")
    if c.pos != c.end:
        raise ValueError("trailing bytes in body")
    return inputs, labels, num_classes
