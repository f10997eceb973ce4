"""Bitstream container for the learned codec.

Layout (all integers little-endian):

    magic "PCGC" | version u8 | model_id 16B | r u16 | C,D,H,W u16 x 4 |
    occupied u32 | payload_len u32 | payload

The payload is the quantized latent tensor serialized as zig-zag LEB128
varints in row-major order, then DEFLATE-compressed (raw RFC 1951 stream,
no zlib wrapper).
"""

import struct
import zlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import CorruptionError

MAGIC = b"PCGC"
VERSION = 1
_HEADER = struct.Struct("<4sB16sHHHHHII")
_DEFLATE_LEVEL = 9


def deflate(data: bytes) -> bytes:
    comp = zlib.compressobj(_DEFLATE_LEVEL, zlib.DEFLATED, -15)
    return comp.compress(data) + comp.flush()


def inflate(data: bytes) -> bytes:
    try:
        dec = zlib.decompressobj(-15)
        out = dec.decompress(data)
        out += dec.flush()
    except zlib.error as exc:
        raise CorruptionError(f"DEFLATE payload is corrupt: {exc}") from exc
    if dec.unused_data:
        raise CorruptionError("DEFLATE payload has trailing garbage")
    return out


def zigzag_varint_encode(values: np.ndarray) -> bytes:
    """Serialize signed integers as zig-zag LEB128 varints."""
    v = np.ascontiguousarray(values, dtype=np.int64).ravel()
    u = ((v << 1) ^ (v >> 63)).astype(np.uint64)
    if u.size == 0:
        return b""
    if u.max() < 0x80:  # common case: every latent fits one byte
        return u.astype(np.uint8).tobytes()
    out = bytearray()
    for x in u.tolist():
        while x >= 0x80:
            out.append((x & 0x7F) | 0x80)
            x >>= 7
        out.append(x)
    return bytes(out)


def zigzag_varint_decode(blob: bytes, count: int) -> np.ndarray:
    """Parse exactly *count* varints; reject truncation and trailing bytes."""
    arr = np.frombuffer(blob, dtype=np.uint8)
    if arr.size == len(blob) and not (arr & 0x80).any():
        if arr.size != count:
            raise CorruptionError(
                f"latent payload holds {arr.size} integers, expected {count}"
            )
        u = arr.astype(np.uint64)
    else:
        values = []
        x = 0
        shift = 0
        for b in blob:
            x |= (b & 0x7F) << shift
            if b & 0x80:
                shift += 7
                if shift > 63:
                    raise CorruptionError("varint exceeds 64 bits")
            else:
                values.append(x)
                x = 0
                shift = 0
        if shift != 0:
            raise CorruptionError("latent payload ends mid-varint")
        if len(values) != count:
            raise CorruptionError(
                f"latent payload holds {len(values)} integers, expected {count}"
            )
        u = np.asarray(values, dtype=np.uint64)
    return ((u >> np.uint64(1)).astype(np.int64)) ^ -(u & np.uint64(1)).astype(np.int64)


@dataclass
class CompressedBitstream:
    """Self-describing compressed latent container."""

    model_id: bytes
    resolution: int
    latent_shape: Tuple[int, int, int, int]
    occupied_input_voxels: int
    payload: bytes

    @property
    def total_bytes(self) -> int:
        return _HEADER.size + len(self.payload)

    @property
    def bpov(self) -> float:
        """Bits per occupied input voxel for the whole stream."""
        return 8.0 * self.total_bytes / self.occupied_input_voxels

    def to_bytes(self) -> bytes:
        c, d, h, w = self.latent_shape
        return _HEADER.pack(
            MAGIC,
            VERSION,
            self.model_id,
            self.resolution,
            c,
            d,
            h,
            w,
            self.occupied_input_voxels,
            len(self.payload),
        ) + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CompressedBitstream":
        if len(blob) < _HEADER.size:
            raise CorruptionError("bitstream shorter than its header")
        magic, version, model_id, r, c, d, h, w, occ, plen = _HEADER.unpack(
            blob[: _HEADER.size]
        )
        if magic != MAGIC:
            raise CorruptionError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise CorruptionError(f"unsupported bitstream version {version}")
        payload = blob[_HEADER.size :]
        if len(payload) != plen:
            raise CorruptionError(
                f"payload length mismatch: header says {plen}, got {len(payload)}"
            )
        return cls(model_id, r, (c, d, h, w), occ, payload)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CompressedBitstream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
