"""Binary netpbm images and the BEDT tensor checkpoint format.

Only the binary variants are handled: P5 (grayscale) and P6 (RGB), maxval
255 or 65535, no header comments. Pixel values are exposed as float32 in
[0, 1]; writing quantizes with round-half-up so that ``read(write(x))`` is
the 8-bit (or 16-bit) quantization of ``x``.

Checkpoint byte layout, all integers and floats little-endian::

    b"BEDT" | u32 version | u32 count
    count x { u32 name_len | name (UTF-8) | u8 dtype (0=f32, 1=f64)
              | u32 rank | rank x u64 dim | raw values }
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "BadMagicError",
    "UnknownDtypeError",
    "CheckpointLengthError",
    "DataIOError",
    "FormatError",
    "LengthError",
    "Image",
    "read_image",
    "write_image",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "parse_checkpoint",
]

MAGIC = b"BEDT"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_WHITESPACE = b" \t\n\r\x0b\x0c"


class DataIOError(Exception):
    pass


class FormatError(DataIOError):
    """Malformed or unsupported image header."""


class LengthError(DataIOError):
    """Pixel payload shorter or longer than the header promises."""


class CheckpointError(DataIOError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnknownDtypeError(CheckpointError):
    pass


class CheckpointLengthError(CheckpointError):
    pass


@dataclass(frozen=True)
class Image:
    """Float image in [0, 1].

    ``data`` has shape (H, W) for one channel and (H, W, 3) for RGB.
    ``maxval`` records the source bit depth and is reused when writing.
    """

    data: np.ndarray
    maxval: int = 255

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise ValueError(f"image data must be (H, W) or (H, W, 3), got {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0 or data.max(initial=0.0) > 1:
            raise ValueError("image values must be finite and in [0, 1]")
        if self.maxval not in (255, 65535):
            raise ValueError(f"unsupported maxval {self.maxval}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf) and buf[pos] in _WHITESPACE:
        pos += 1
    if pos < len(buf) and buf[pos:pos + 1] == b"#":
        raise FormatError("header comments are not supported")
    start = pos
    while pos < len(buf) and buf[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise FormatError("truncated header")
    return buf[start:pos], pos


def decode_netpbm(buf: bytes) -> Image:
    magic, pos = _next_token(buf, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported magic {magic!r}; only P5/P6 are read")
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError("image dimensions must be positive")
    if maxval not in (255, 65535):
        raise FormatError(f"maxval {maxval} not supported (255 or 65535)")
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise FormatError("missing whitespace after maxval")
    payload = buf[pos + 1:]

    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    expected = width * height * channels * dtype.itemsize
    if len(payload) != expected:
        raise LengthError(f"payload is {len(payload)} bytes, expected {expected}")
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    data = raw / np.float32(maxval)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(data.reshape(shape), maxval=maxval)


def encode_netpbm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n%d\n" % (magic, img.width, img.height, img.maxval)
    q = np.floor(img.data.astype(np.float64) * img.maxval + 0.5)
    dtype = ">u2" if img.maxval == 65535 else "u1"
    return header + q.astype(dtype).tobytes()


def read_image(path: str | os.PathLike) -> Image:
    with open(path, "rb") as f:
        return decode_netpbm(f.read())


def write_image(img: Image, path: str | os.PathLike) -> None:
    data = encode_netpbm(img)
    with open(path, "wb") as f:
        f.write(data)


@dataclass
class Checkpoint:
    """Ordered mapping of names to float32/float64 arrays.

    Scalars are stored as rank-1 arrays of length 1; rank 0 is not part of
    the format.
    """

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        for name, arr in list(self.tensors.items()):
            self.tensors[name] = _check_tensor(name, arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, arr) -> None:
        self.tensors[name] = _check_tensor(name, arr)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return checkpoint_bytes(self) == checkpoint_bytes(other)

    def names(self) -> list[str]:
        return list(self.tensors)


def _check_tensor(name: str, arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype not in (np.float32, np.float64):
        raise TypeError(f"{name}: dtype {arr.dtype} is not f32/f64")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    return arr


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BI", _DTYPE_TAGS[le.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(le).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointLengthError(
                f"unexpected end of checkpoint at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}")
    r.take(4)
    version, count = r.unpack("<II")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BI")
        if tag not in _TAG_DTYPES:
            raise UnknownDtypeError(f"{name}: unknown dtype tag {tag}")
        dims = r.unpack(f"<{rank}Q")
        dtype = _TAG_DTYPES[tag]
        n = int(np.prod(dims, dtype=np.uint64)) if rank else 1
        raw = r.take(n * dtype.itemsize)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
        tensors[name] = arr.astype(dtype.newbyteorder("="))
    if r.pos != len(buf):
        raise CheckpointLengthError(f"{len(buf) - r.pos} trailing bytes after last entry")
    return Checkpoint(tensors, version=version)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
