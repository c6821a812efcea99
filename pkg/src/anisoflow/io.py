"""Grid and image file formats.

AGRD layout (little-endian)::

    b"AGRD" | u32 width | u32 height | u8 kind | float64 planes, row-major

``kind`` is 0 for a scalar grid (one plane), 1 for a vector field (x plane,
then y plane) and 2 for a tensor field (a11, a12, a22 planes).
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .grid import GridError, TensorField

MAGIC = b"AGRD"
_HEADER = struct.Struct("<4sIIB")
KIND_SCALAR, KIND_VECTOR, KIND_TENSOR = 0, 1, 2
_PLANES = {KIND_SCALAR: 1, KIND_VECTOR: 2, KIND_TENSOR: 3}


class FormatError(ValueError):
    pass


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def encode_agrd(obj) -> bytes:
    if isinstance(obj, TensorField):
        kind, planes = KIND_TENSOR, obj.stack()
    else:
        arr = np.asarray(obj, dtype=np.float64)
        if arr.ndim == 2:
            kind, planes = KIND_SCALAR, arr[None]
        elif arr.ndim == 3 and arr.shape[0] == 2:
            kind, planes = KIND_VECTOR, arr
        else:
            raise GridError(f"cannot encode array of shape {arr.shape}")
    h, w = planes.shape[1:]
    body = np.ascontiguousarray(planes, dtype="<f8").tobytes()
    return _HEADER.pack(MAGIC, w, h, kind) + body


def decode_agrd(data: bytes):
    if len(data) < _HEADER.size:
        raise FormatError("truncated AGRD header")
    magic, w, h, kind = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if kind not in _PLANES:
        raise FormatError(f"unknown AGRD kind {kind}")
    n = _PLANES[kind]
    expected = _HEADER.size + 8 * n * w * h
    if len(data) != expected:
        raise FormatError(f"AGRD size {len(data)} != expected {expected}")
    planes = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(n, h, w).astype(np.float64)
    if kind == KIND_SCALAR:
        return planes[0]
    if kind == KIND_VECTOR:
        return planes
    return TensorField(planes[0], planes[1], planes[2])


def write_agrd(path, obj) -> None:
    _atomic_write(path, encode_agrd(obj))


def read_agrd(path):
    return decode_agrd(Path(path).read_bytes())


# --- PGM ---------------------------------------------------------------------

def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping comments; also return end offset."""
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Read a P2 (ASCII) or P5 (binary, 8/16-bit) PGM as float64 in raw sample units."""
    data = Path(path).read_bytes()
    tokens, pos = _pgm_tokens(data)
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        if len(data) - pos < w * h * np.dtype(dtype).itemsize:
            raise FormatError("truncated P5 data")
        arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    elif magic == b"P2":
        arr = np.array(data[pos:].split()[: w * h], dtype=np.int64)
        if arr.size != w * h:
            raise FormatError("truncated P2 data")
    else:
        raise FormatError(f"not a PGM file (magic {magic!r})")
    return arr.reshape(h, w).astype(np.float64)


def write_pgm(path, img8: np.ndarray, plain: bool = False) -> None:
    img8 = np.asarray(img8)
    if img8.dtype != np.uint8 or img8.ndim != 2:
        raise FormatError("write_pgm expects a 2-D uint8 array")
    h, w = img8.shape
    if plain:
        rows = "\n".join(" ".join(str(int(v)) for v in row) for row in img8)
        payload = f"P2\n{w} {h}\n255\n{rows}\n".encode()
    else:
        payload = f"P5\n{w} {h}\n255\n".encode() + img8.tobytes()
    _atomic_write(path, payload)


# --- PNG / generic -----------------------------------------------------------

def luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (H, W, 3) array."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def read_image(path) -> np.ndarray:
    """Read PGM, PNG or AGRD into a float64 grid (RGB reduced to luma)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return read_pgm(path)
    if suffix == ".agrd":
        out = read_agrd(path)
        if not (isinstance(out, np.ndarray) and out.ndim == 2):
            raise FormatError(f"{path} is not a scalar AGRD grid")
        return out
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:
        arr = luma(arr[..., :3])
    return arr.astype(np.float64)


def to_uint8(u: np.ndarray, lo: float | None = None, hi: float | None = None):
    """Affine map ``[lo, hi] -> [0, 255]``; returns the image and the (scale, offset) used."""
    u = np.asarray(u, dtype=np.float64)
    lo = float(u.min()) if lo is None else float(lo)
    hi = float(u.max()) if hi is None else float(hi)
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip(np.rint((u - lo) * scale), 0, 255).astype(np.uint8)
    return img, {"scale": scale, "offset": lo}


def write_image(path, u: np.ndarray, lo: float | None = None, hi: float | None = None) -> dict:
    """Write an 8-bit preview (PGM or PNG by suffix); returns the affine scaling used."""
    path = Path(path)
    img, scaling = to_uint8(u, lo, hi)
    if path.suffix.lower() == ".png":
        from PIL import Image

        tmp = path.with_name(path.name + ".tmp")
        Image.fromarray(img, mode="L").save(tmp, format="PNG")
        os.replace(tmp, path)
    else:
        write_pgm(path, img)
    return scaling
