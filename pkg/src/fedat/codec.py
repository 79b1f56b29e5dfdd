"""Polyline-style lossy codec for parameter vectors.

Each weight is rounded (half away from zero) to ``precision`` decimals, zig-zag
folded into an unsigned integer and written as 5-bit chunks, least significant
first, with 0x20 marking continuation and 63 added to land in printable ASCII.
Unlike the geographic polyline format, values are encoded independently (no
deltas), so any value can be decoded on its own.

Wire format, little-endian::

    b"FATC" | version u8 | precision u8 (0 = lossless) | layer count u16
    per layer: rank u16 | dims u32 * rank | payload length u32 | payload

In lossless mode the payload is raw float64 bytes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .model import ParamVector

MAGIC = b"FATC"
VERSION = 1
LAYER_HEADER_BYTES = 16
LIMIT = 2 ** 31
_MAX_CHUNKS = 7  # ceil(32 / 5)


class CodecError(ValueError):
    pass


class MagnitudeOverflowError(CodecError):
    def __init__(self, message, layer=None, index=None):
        super().__init__(message)
        self.layer = layer
        self.index = index


class MalformedPayloadError(CodecError):
    pass


class CodecShapeError(CodecError):
    pass


def _check_precision(precision):
    if precision is not None and not (isinstance(precision, (int, np.integer))
                                      and 1 <= precision <= 9):
        raise CodecError(f"precision must be an integer in [1, 9] or None, got {precision!r}")


# -- scalar reference --------------------------------------------------------

def round_half_away(x: float, precision: int) -> int:
    a = abs(x) * 10.0 ** precision
    r = math.floor(a)
    if a - r >= 0.5:
        r += 1
    return int(math.copysign(r, x)) if r else 0


def encode_value(x: float, precision: int) -> str:
    _check_precision(precision)
    if not math.isfinite(x):
        raise MagnitudeOverflowError(f"cannot encode non-finite value {x}")
    v = round_half_away(x, precision)
    if abs(v) >= LIMIT:
        raise MagnitudeOverflowError(f"{x} at precision {precision} exceeds the 32-bit range")
    u = v << 1
    if v < 0:
        u = ~u
    out = []
    while u >= 0x20:
        out.append(chr((0x20 | (u & 0x1F)) + 63))
        u >>= 5
    out.append(chr(u + 63))
    return "".join(out)


def decode_value(s: str, precision: int) -> float:
    _check_precision(precision)
    if not s:
        raise MalformedPayloadError("empty payload")
    u = shift = 0
    for i, ch in enumerate(s):
        b = ord(ch) - 63
        if not 0 <= b <= 63:
            raise MalformedPayloadError(f"character {ch!r} outside [63, 126]")
        u |= (b & 0x1F) << shift
        shift += 5
        last = b < 0x20
        if last and i != len(s) - 1:
            raise MalformedPayloadError("payload holds more than one value")
    if not last:
        raise MalformedPayloadError("truncated payload: continuation bit set on final char")
    v = ~(u >> 1) if u & 1 else u >> 1
    return v / 10 ** precision


# -- vectorised layer codec -------------------------------------------------

def quantize(values: np.ndarray, precision: int) -> np.ndarray:
    """Signed integers ``round_half_away(values * 10**precision)`` as int64."""
    a = np.abs(values) * 10.0 ** precision
    r = np.floor(a)
    r += (a - r) >= 0.5
    return (np.sign(values) * r).astype(np.int64)


def encode_array(values: np.ndarray, precision: int, layer: int | None = None) -> bytes:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        return b""
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise MagnitudeOverflowError(f"non-finite value at layer {layer}, index {i}", layer, i)
    over = np.abs(values) * 10.0 ** precision >= LIMIT - 0.5
    if over.any():
        i = int(np.flatnonzero(over)[0])
        raise MagnitudeOverflowError(
            f"value {values[i]} at layer {layer}, index {i} exceeds the 32-bit range "
            f"at precision {precision}", layer, i)
    v = quantize(values, precision)
    u = v << 1
    u = np.where(v < 0, ~u, u)
    shifts = 5 * np.arange(_MAX_CHUNKS)
    chunks = (u[:, None] >> shifts) & 0x1F
    nchunks = 1 + ((u[:, None] >> shifts[1:]) > 0).sum(axis=1)
    pos = np.arange(_MAX_CHUNKS)
    cont = pos[None, :] < (nchunks[:, None] - 1)
    chars = chunks + 63 + 0x20 * cont
    keep = pos[None, :] < nchunks[:, None]
    return chars[keep].astype(np.uint8).tobytes()


def decode_array(payload: bytes, precision: int) -> np.ndarray:
    if not payload:
        return np.zeros(0)
    a = np.frombuffer(payload, dtype=np.uint8).astype(np.int64) - 63
    if ((a < 0) | (a > 63)).any():
        raise MalformedPayloadError("payload character outside [63, 126]")
    last = a < 0x20
    if not last[-1]:
        raise MalformedPayloadError("truncated payload: continuation bit set on final char")
    starts = np.flatnonzero(np.concatenate(([True], last[:-1])))
    lengths = np.diff(np.append(starts, a.size))
    if lengths.max() > _MAX_CHUNKS:
        raise MalformedPayloadError("value longer than 7 chunks")
    pos = np.arange(a.size) - np.repeat(starts, lengths)
    u = np.add.reduceat((a & 0x1F) << (5 * pos), starts)
    v = np.where(u & 1, ~(u >> 1), u >> 1)
    return v / 10 ** precision


# -- models -----------------------------------------------------------------

@dataclass(frozen=True)
class EncodedLayer:
    shape: tuple[int, ...]
    payload: bytes


@dataclass(frozen=True)
class EncodedModel:
    precision: int | None  # None means the lossless debug codec
    layers: tuple[EncodedLayer, ...]

    @property
    def nbytes(self) -> int:
        """Accounted size: payload bytes, 16 per layer header, 1 for precision."""
        return sum(len(l.payload) for l in self.layers) + LAYER_HEADER_BYTES * len(self.layers) + 1

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<BBH", VERSION, self.precision or 0, len(self.layers))]
        for layer in self.layers:
            parts.append(struct.pack(f"<H{len(layer.shape)}I", len(layer.shape), *layer.shape))
            parts.append(struct.pack("<I", len(layer.payload)))
            parts.append(layer.payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EncodedModel":
        if blob[:4] != MAGIC:
            raise MalformedPayloadError("bad magic")
        try:
            version, precision, count = struct.unpack_from("<BBH", blob, 4)
            if version != VERSION:
                raise MalformedPayloadError(f"unsupported version {version}")
            off = 8
            layers = []
            for _ in range(count):
                (rank,) = struct.unpack_from("<H", blob, off)
                off += 2
                dims = struct.unpack_from(f"<{rank}I", blob, off)
                off += 4 * rank
                (n,) = struct.unpack_from("<I", blob, off)
                off += 4
                if off + n > len(blob):
                    raise MalformedPayloadError("payload runs past end of buffer")
                layers.append(EncodedLayer(tuple(dims), bytes(blob[off:off + n])))
                off += n
        except struct.error as exc:
            raise MalformedPayloadError(f"truncated frame: {exc}") from None
        if off != len(blob):
            raise MalformedPayloadError("trailing bytes after last layer")
        return cls(precision or None, tuple(layers))


def compress(model: ParamVector, precision: int | None) -> EncodedModel:
    _check_precision(precision)
    layers = []
    for i, arr in enumerate(model.layers()):
        if precision is None:
            payload = arr.astype("<f8").tobytes()
        else:
            payload = encode_array(arr, precision, layer=i)
        layers.append(EncodedLayer(arr.shape, payload))
    return EncodedModel(precision, tuple(layers))


def decompress(enc: EncodedModel) -> ParamVector:
    parts = []
    for i, layer in enumerate(enc.layers):
        if enc.precision is None:
            if len(layer.payload) % 8:
                raise MalformedPayloadError(f"layer {i}: raw payload not a multiple of 8 bytes")
            vals = np.frombuffer(layer.payload, dtype="<f8").astype(np.float64)
        else:
            vals = decode_array(layer.payload, enc.precision)
        if vals.size != math.prod(layer.shape):
            raise CodecShapeError(
                f"layer {i}: decoded {vals.size} values for shape {layer.shape}")
        parts.append(vals)
    values = np.concatenate(parts) if parts else np.zeros(0)
    return ParamVector(values, tuple(l.shape for l in enc.layers))


def compression_ratio(model: ParamVector, precision: int) -> float:
    """Raw float64 size over accounted encoded size."""
    return 8 * len(model) / compress(model, precision).nbytes
