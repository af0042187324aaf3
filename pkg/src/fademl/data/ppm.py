"""Binary PPM (P6) codec.

Reads any maxval in ``1..65535`` (two bytes per sample, big-endian, above
255); always writes maxval 255.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import CodecError

WHITESPACE = b" \t\r\n\x0b\x0c"


def _tokens(buf, count):
    """Read ``count`` header tokens; returns them and the offset just past the
    single whitespace byte that terminates the last one."""
    pos = 0
    out = []
    while len(out) < count:
        while pos < len(buf) and (buf[pos] in WHITESPACE or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < len(buf) and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos] not in WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise CodecError("truncated PPM header")
        out.append(buf[start:pos])
    if pos >= len(buf) or buf[pos] not in WHITESPACE:
        raise CodecError("PPM header must end with a single whitespace byte")
    return out, pos + 1


def decode_ppm(data: bytes) -> np.ndarray:
    """Decode P6 bytes into ``(pixels (H, W, 3), maxval)``."""
    if data[:2] != b"P6":
        raise CodecError(f"not a binary PPM (P6) image: magic {data[:2]!r}")
    tokens, offset = _tokens(data[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise CodecError(f"malformed PPM header {tokens!r}") from None
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise CodecError(f"invalid PPM dimensions {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * 3 * dtype.itemsize
    body = data[offset:offset + need]
    if len(body) < need:
        raise CodecError(f"PPM pixel data truncated: {len(body)} of {need} bytes")
    pixels = np.frombuffer(body, dtype=dtype).reshape(height, width, 3)
    return pixels, maxval


def read_ppm(path) -> np.ndarray:
    """Read a P6 file as a float32 ``(3, H, W)`` tensor in ``[0, 1]``."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        pixels, maxval = decode_ppm(data)
    except CodecError as exc:
        raise CodecError(f"{path}: {exc}") from None
    return (pixels.astype(np.float32) / np.float32(maxval)).transpose(2, 0, 1).copy()


def encode_ppm(image) -> bytes:
    """Encode a ``(3, H, W)`` tensor in ``[0, 1]`` as P6 with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise CodecError(f"expected a (3, H, W) image, got {image.shape}")
    if not np.isfinite(image).all():
        raise CodecError("image contains non-finite values")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    _, h, w = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def write_ppm(path, image):
    data = encode_ppm(image)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
