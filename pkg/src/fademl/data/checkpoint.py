"""Network checkpoints.

Byte layout (all integers little-endian)::

    magic        4 bytes   b"FADM"
    version      u16       currently 1
    ndim         u16       rank of the input shape (3 for images)
    input_shape  ndim x u32
    num_layers   u32
    layer table  num_layers entries of:
                   kind   u8   1=conv2d 2=relu 3=maxpool 4=dense 5=softmax
                   nargs  u8
                   args   nargs x u32
                            conv2d:  out_channels, kernel, stride, pad
                            maxpool: window, stride
                            dense:   out_units
    parameters   for every conv2d/dense layer in order: weight then bias,
                 raw float32 little-endian, C order. Shapes follow from the
                 layer table: conv weight (out, in, k, k), dense weight
                 (out, in_features), bias (out,).

Nothing may follow the last parameter buffer.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import (CheckpointError, CheckpointMagicError, CheckpointTruncatedError,
                      CheckpointVersionError, ConfigError)
from ..nn import Network, layer_from_descriptor

MAGIC = b"FADM"
VERSION = 1
KIND_CODES = {"conv2d": 1, "relu": 2, "maxpool": 3, "dense": 4, "softmax": 5}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


def encode_checkpoint(net: Network) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<HH", VERSION, len(net.input_shape))
    out += struct.pack(f"<{len(net.input_shape)}I", *net.input_shape)
    out += struct.pack("<I", len(net.layers))
    for layer in net.layers:
        kind, *args = layer.descriptor()
        out += struct.pack("<BB", KIND_CODES[kind], len(args))
        out += struct.pack(f"<{len(args)}I", *args)
    for p in net.parameters():
        out += np.ascontiguousarray(p, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} at byte {self.pos} "
                f"(need {n}, have {len(self.data) - self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes) -> Network:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointMagicError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    version, ndim = r.unpack("<HH", "header")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    input_shape = r.unpack(f"<{ndim}I", "input shape")
    (num_layers,) = r.unpack("<I", "layer count")
    layers = []
    for i in range(num_layers):
        code, nargs = r.unpack("<BB", f"layer {i} descriptor")
        args = r.unpack(f"<{nargs}I", f"layer {i} arguments")
        if code not in CODE_KINDS:
            raise CheckpointError(f"unknown layer code {code} in layer {i}")
        try:
            layers.append(layer_from_descriptor((CODE_KINDS[code], *args)))
        except (ConfigError, TypeError) as exc:
            raise CheckpointError(f"invalid layer {i}: {exc}") from None
    try:
        net = Network(layers, input_shape).initialize(seed=0)
    except ConfigError as exc:
        raise CheckpointError(f"inconsistent layer table: {exc}") from None
    params = []
    for j, p in enumerate(net.parameters()):
        raw = r.take(p.size * 4, f"parameter buffer {j}")
        params.append(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(p.shape))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} unexpected trailing bytes after parameters")
    net.set_parameters(params)
    return net


def save_checkpoint(net: Network, path):
    data = encode_checkpoint(net)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
