"""Bit-exact binary formats for model weights and latent codes.

Both formats are little-endian with fixed 4-byte magics and a u16 version
field. Declared sizes must agree exactly with the actual byte count; any
trailing bytes are rejected.

Weights container ("AEW1")::

    magic   4s   = b"AEW1"
    version u16
    count   u32                     number of tensors
    per tensor:
        name_len u16, name utf-8
        rank     u8
        extents  rank x u32
        data     float32 x prod(extents)

Latent file ("AEL1")::

    magic   4s   = b"AEL1"
    version u16
    dtype   u8                      0 = float32, 1 = quantized uint8
    c, h, w u32 each
    dtype 1 only: min float32, scale float32
    payload c*h*w x (4 or 1) bytes

Quantized mode is min-max affine: ``q = round((v - min)/scale)`` with
``scale = (max - min)/255``; a constant latent stores scale 0 and
dequantizes to min exactly. No entropy coding.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError
from .model import (
    IMAGE_CHANNELS,
    LATENT_CHANNELS,
    LatentCode,
    ModelParams,
    SPATIAL_FACTOR,
)
from .tensor import Tensor

__all__ = [
    "WEIGHTS_MAGIC",
    "LATENT_MAGIC",
    "FORMAT_VERSION",
    "LATENT_DTYPE_F32",
    "LATENT_DTYPE_U8",
    "CompressionRatios",
    "save_weights",
    "load_weights",
    "save_named_tensors",
    "load_named_tensors",
    "serialize_latent",
    "deserialize_latent",
    "save_latent",
    "load_latent",
    "compression_ratio",
]

WEIGHTS_MAGIC = b"AEW1"
LATENT_MAGIC = b"AEL1"
FORMAT_VERSION = 1

LATENT_DTYPE_F32 = 0
LATENT_DTYPE_U8 = 1

_MAX_EXTENT_PRODUCT = 1 << 31


class _Reader:
    """Sequential parser that reports the byte offset of any violation."""

    def __init__(self, buf, label):
        self.buf = buf
        self.pos = 0
        self.label = label

    def take(self, n, what):
        end = self.pos + n
        if end > len(self.buf):
            raise FormatError(
                f"{self.label}: truncated while reading {what}", offset=self.pos
            )
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def expect_end(self):
        if self.pos != len(self.buf):
            raise FormatError(
                f"{self.label}: {len(self.buf) - self.pos} trailing bytes after "
                "declared content", offset=self.pos,
            )


def _check_magic(reader, expected):
    got = reader.take(4, "magic")
    if got != expected:
        raise FormatError(
            f"{reader.label}: bad magic {got!r}, expected {expected.decode()!r}",
            offset=0,
        )
    (version,) = reader.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{reader.label}: unsupported format version {version}", offset=4
        )


# ---------------------------------------------------------------------------
# weights container
# ---------------------------------------------------------------------------

def serialize_named_tensors(arrays):
    """Encode an ordered name -> float array mapping as AEW1 bytes."""
    chunks = [WEIGHTS_MAGIC, struct.pack("<H", FORMAT_VERSION),
              struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float32)
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4", copy=False).tobytes())
    return b"".join(chunks)


def parse_named_tensors(buf, label="weights"):
    """Decode AEW1 bytes into an ordered name -> float32 array mapping.

    Magic, version, and every declared size are validated before any array
    is allocated.
    """
    reader = _Reader(buf, label)
    _check_magic(reader, WEIGHTS_MAGIC)
    (count,) = reader.unpack("<I", "tensor count")

    # first pass: walk headers and record (name, shape, data offset)
    entries = []
    for i in range(count):
        (name_len,) = reader.unpack("<H", f"name length of tensor {i}")
        name = reader.take(name_len, f"name of tensor {i}").decode("utf-8")
        (rank,) = reader.unpack("<B", f"rank of {name}")
        if rank == 0:
            raise FormatError(
                f"{label}: tensor {name!r} declares rank 0", offset=reader.pos - 1
            )
        shape = reader.unpack(f"<{rank}I", f"extents of {name}")
        total = 1
        for extent in shape:
            total *= extent
        if total <= 0 or total > _MAX_EXTENT_PRODUCT:
            raise FormatError(
                f"{label}: extents {shape} of {name!r} overflow sane bounds",
                offset=reader.pos,
            )
        data_pos = reader.pos
        reader.take(4 * total, f"data of {name}")
        entries.append((name, shape, data_pos, total))
    reader.expect_end()

    arrays = {}
    for name, shape, data_pos, total in entries:
        raw = buf[data_pos:data_pos + 4 * total]
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(
            np.float32
        )
    return arrays


def save_named_tensors(arrays, path):
    with open(path, "wb") as fh:
        fh.write(serialize_named_tensors(arrays))


def load_named_tensors(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_named_tensors(buf, label=str(path))


def save_weights(params, path):
    """Write model parameters, preserving their canonical order."""
    save_named_tensors({n: t.data for n, t in params.items()}, path)


def load_weights(path):
    """Read model parameters; roundtrips bit-exactly with save_weights."""
    arrays = load_named_tensors(path)
    return ModelParams(
        {n: Tensor(a, requires_grad=True) for n, a in arrays.items()}
    )


# ---------------------------------------------------------------------------
# latent files
# ---------------------------------------------------------------------------

def serialize_latent(latent, mode="f32"):
    """Encode one latent code as AEL1 bytes.

    ``mode`` is "f32" (bit-exact) or "u8" (min-max affine quantization,
    per-element error at most scale/2).
    """
    values = latent.values if isinstance(latent, LatentCode) else np.asarray(latent)
    if values.ndim == 4:
        if values.shape[0] != 1:
            raise DimensionError(
                f"latent files hold one image; got batch of {values.shape[0]}"
            )
        values = values[0]
    if values.ndim != 3:
        raise DimensionError(f"expected latent shape (C,h,w), got {values.shape}")
    c, h, w = values.shape
    values = np.ascontiguousarray(values, dtype=np.float32)

    head = [LATENT_MAGIC, struct.pack("<H", FORMAT_VERSION)]
    if mode == "f32":
        head.append(struct.pack("<B", LATENT_DTYPE_F32))
        head.append(struct.pack("<3I", c, h, w))
        payload = values.astype("<f4", copy=False).tobytes()
    elif mode == "u8":
        head.append(struct.pack("<B", LATENT_DTYPE_U8))
        head.append(struct.pack("<3I", c, h, w))
        vmin = np.float32(values.min())
        scale = np.float32((np.float64(values.max()) - np.float64(vmin)) / 255.0)
        if scale > 0:
            q = np.rint((values.astype(np.float64) - np.float64(vmin))
                        / np.float64(scale))
            q = np.clip(q, 0, 255).astype(np.uint8)
        else:
            q = np.zeros(values.shape, dtype=np.uint8)
        head.append(struct.pack("<2f", float(vmin), float(scale)))
        payload = q.tobytes()
    else:
        raise ValueError(f"unknown latent serialization mode {mode!r}")
    return b"".join(head) + payload


def deserialize_latent(buf, label="latent"):
    """Decode AEL1 bytes back to a :class:`LatentCode` (always float32)."""
    reader = _Reader(buf, label)
    _check_magic(reader, LATENT_MAGIC)
    (dtype_tag,) = reader.unpack("<B", "dtype tag")
    c, h, w = reader.unpack("<3I", "latent dims")
    total = c * h * w
    if total <= 0 or total > _MAX_EXTENT_PRODUCT:
        raise FormatError(
            f"{label}: latent dims ({c},{h},{w}) overflow sane bounds",
            offset=7,
        )
    if dtype_tag == LATENT_DTYPE_F32:
        raw = reader.take(4 * total, "float32 payload")
        reader.expect_end()
        values = np.frombuffer(raw, dtype="<f4").reshape(c, h, w).astype(np.float32)
    elif dtype_tag == LATENT_DTYPE_U8:
        vmin, scale = reader.unpack("<2f", "quantization range")
        raw = reader.take(total, "uint8 payload")
        reader.expect_end()
        q = np.frombuffer(raw, dtype=np.uint8).reshape(c, h, w)
        values = (np.float64(vmin) + np.float64(scale) * q).astype(np.float32)
    else:
        raise FormatError(f"{label}: unknown dtype tag {dtype_tag}", offset=6)
    return LatentCode(values[None])


def save_latent(latent, path, mode="f32"):
    with open(path, "wb") as fh:
        fh.write(serialize_latent(latent, mode))


def load_latent(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    return deserialize_latent(buf, label=str(path))


# ---------------------------------------------------------------------------
# compression accounting
# ---------------------------------------------------------------------------

@dataclass
class CompressionRatios:
    """Element count ratio and on-the-wire byte ratio, reported separately.

    Counting elements, a (H,W,3) image against its (H/16,W/16,64) latent is
    always 12:1; counting bytes, a float32 latent is only ~3:1 against 8-bit
    RGB while the quantized-uint8 payload restores ~12:1.
    """

    element_ratio: float
    byte_ratio: float


def compression_ratio(input_shape, latent_payload_bytes, input_payload_bytes):
    """Ratios for an (H,W,C) input against its serialized latent."""
    h, w, c = input_shape
    if c != IMAGE_CHANNELS:
        raise DimensionError(f"expected {IMAGE_CHANNELS}-channel input, got {c}")
    if h % SPATIAL_FACTOR or w % SPATIAL_FACTOR:
        raise DimensionError(
            f"input dims {h}x{w} must be divisible by {SPATIAL_FACTOR}"
        )
    input_elements = h * w * c
    latent_elements = (h // SPATIAL_FACTOR) * (w // SPATIAL_FACTOR) * LATENT_CHANNELS
    if latent_payload_bytes <= 0:
        raise ValueError("latent payload byte count must be positive")
    return CompressionRatios(
        element_ratio=input_elements / latent_elements,
        byte_ratio=input_payload_bytes / latent_payload_bytes,
    )
