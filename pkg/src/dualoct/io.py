"""On-disk formats: DOCT tensors, PGM previews and key=value text files.

DOCT layout (little-endian)::

    b"DOCT" | u32 version=1 | u32 dtype (0 = f64) | u32 ndim
    | ndim x u64 dims | real plane (f64, row-major) | imag plane
"""

import os
import struct

import numpy as np

from dualoct.tensor import ComplexTensor

MAGIC = b"DOCT"
VERSION = 1
DTYPE_F64 = 0
_HEADER = struct.Struct("<4sIII")


class DOCTFormatError(ValueError):
    """Malformed DOCT data; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode_doct(t):
    if not isinstance(t, ComplexTensor):
        t = ComplexTensor(t)
    head = _HEADER.pack(MAGIC, VERSION, DTYPE_F64, t.ndim)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + dims + t.real.astype("<f8").tobytes() + t.imag.astype("<f8").tobytes()


def decode_doct(buf):
    if len(buf) < _HEADER.size:
        raise DOCTFormatError(f"truncated header: {len(buf)} bytes, need {_HEADER.size}", len(buf))
    magic, version, dtype, ndim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DOCTFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise DOCTFormatError(f"unsupported version {version}", 4)
    if dtype != DTYPE_F64:
        raise DOCTFormatError(f"unsupported dtype code {dtype}", 8)
    if ndim < 1:
        raise DOCTFormatError("ndim must be >= 1", 12)
    off = _HEADER.size
    end_dims = off + 8 * ndim
    if len(buf) < end_dims:
        raise DOCTFormatError(f"truncated dims: need {end_dims} bytes, have {len(buf)}", len(buf))
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    for i, d in enumerate(shape):
        if d < 1:
            raise DOCTFormatError(f"dimension {i} is {d}", off + 8 * i)
    count = int(np.prod(shape))
    need = end_dims + 16 * count
    if len(buf) != need:
        raise DOCTFormatError(f"payload size mismatch: expected {need} bytes total, have {len(buf)}",
                              min(len(buf), need))
    real = np.frombuffer(buf, dtype="<f8", count=count, offset=end_dims).reshape(shape)
    imag = np.frombuffer(buf, dtype="<f8", count=count, offset=end_dims + 8 * count).reshape(shape)
    return ComplexTensor(real, imag)


def write_doct(path, t):
    with open(path, "wb") as f:
        f.write(encode_doct(t))


def read_doct(path):
    with open(path, "rb") as f:
        return decode_doct(f.read())


def write_pgm(path, image):
    """16-bit binary PGM (P5), values mapped linearly from [0, max] to [0, 65535]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D image, got shape {img.shape}")
    peak = img.max()
    scaled = np.zeros(img.shape) if peak <= 0 else np.clip(img, 0, None) / peak
    data = np.rint(scaled * 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[4], dtype=dtype, count=w * h).reshape(h, w)


def read_keyvalue(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def write_keyvalue(path, items):
    with open(path, "w") as f:
        for key, value in items:
            f.write(f"{key}={value}\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
