"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np


class PNMError(ValueError):
    pass


def quantize(x) -> np.ndarray:
    """Clamp to [0, 1] and map to 0..255 with round-half-up."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float64) / 255.0


def write_image(path, x) -> None:
    """Write ``3 x H x W`` as P6, or ``H x W`` / ``1 x H x W`` as P5."""
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[0] == 1:
        x = x[0]
    if x.ndim == 3:
        if x.shape[0] != 3:
            raise ValueError(f"colour images must have 3 channels, got {x.shape[0]}")
        magic, payload = b"P6", quantize(x).transpose(1, 2, 0)
        h, w = x.shape[1:]
    elif x.ndim == 2:
        magic, payload = b"P5", quantize(x)
        h, w = x.shape
    else:
        raise ValueError(f"cannot write an array of shape {x.shape} as an image")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(payload).tobytes())


def _header_fields(buf: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PNMError(f"malformed header at byte {pos}: expected an integer")
        out.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PNMError(f"malformed header at byte {pos}: expected whitespace after maxval")
    return out, pos + 1


def read_image_u8(path) -> np.ndarray:
    """Raw 8-bit contents: ``3 x H x W`` for P6, ``H x W`` for P5."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"bad magic {magic!r} at byte 0 (expected P5 or P6)")
    (w, h, maxval), pos = _header_fields(buf, 3, 2)
    if maxval != 255:
        raise PNMError(f"unsupported maxval {maxval} (only 255) in header ending at byte {pos}")
    if w < 1 or h < 1:
        raise PNMError(f"invalid image size {w}x{h}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    have = len(buf) - pos
    if have < need:
        raise PNMError(f"truncated payload at byte {len(buf)}: expected {need} bytes from byte {pos}, got {have}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    if channels == 3:
        return data.reshape(h, w, 3).transpose(2, 0, 1).copy()
    return data.reshape(h, w).copy()


def read_image(path) -> np.ndarray:
    """Image as float64 values in [0, 1]."""
    return dequantize(read_image_u8(path))


def read_mask(path) -> np.ndarray:
    return (read_image_u8(path) >= 128).astype(np.uint8)
