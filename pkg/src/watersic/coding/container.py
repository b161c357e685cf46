"""WSQZ layer container: entropy-coded codes plus 16-bit side scalars, CRC32 protected."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from watersic.coding.entropy_codec import (
    HuffmanTable,
    SymbolHistogram,
    build_huffman,
    decode,
    encode,
)
from watersic.core import config
from watersic.core.errors import BadMagic, ChecksumFailure, TruncatedStream, VersionMismatch
from watersic.core.matcore import FeatureMask, expand
from watersic.quant.pipeline import QuantizedLayer

# magic, version, rows, cols
_HEADER = struct.Struct("<4sIQQ")
_STREAM_LENGTH = struct.Struct("<Q")
_CRC = struct.Struct("<I")


def to_bf16_bits(x) -> np.ndarray:
    """Upper 16 bits of the float32 value, rounded to nearest even on the dropped bits."""
    bits = np.asarray(x, dtype=np.float64).astype(np.float32).view(np.uint32).astype(np.uint64)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) >> 16
    return rounded.astype(np.uint16)


def from_bf16_bits(bits) -> np.ndarray:
    """Widen 16-bit patterns back to float64."""
    wide = np.asarray(bits, dtype=np.uint16).astype(np.uint32) << 16
    return wide.view(np.float32).astype(np.float64)


def round_bf16(x) -> np.ndarray:
    """Value of x after a trip through the 16-bit format."""
    return from_bf16_bits(to_bf16_bits(x))


@dataclass(eq=False)
class DecodedLayer:
    """Contents of a container: full-width codes, fused column scales and row gains."""

    codes: np.ndarray
    scales: np.ndarray
    t: np.ndarray
    mask: FeatureMask

    def dequantize(self) -> np.ndarray:
        """W_hat = T Z diag(s); dead columns are zero."""
        return (self.t[:, None] * self.codes.astype(np.float64)) * self.scales


def encode_container(layer: QuantizedLayer) -> bytes:
    """
    Serialize a quantized layer.

    Layout (little-endian): magic, u32 version, u64 a, u64 n, dead-mask bitset of
    ceil(n/8) bytes (LSB-first, 1 = live), live fused scales alpha_j * gamma_j as
    16-bit floats, row gains t as 16-bit floats, Huffman table, u64 stream length,
    column-major bitstream of the live codes, CRC32 of everything before it.
    """
    live = layer.live_codes
    table = build_huffman(SymbolHistogram.from_codes(live))
    stream = encode(live, table)

    parts = [
        _HEADER.pack(config.CONTAINER_MAGIC, config.CONTAINER_VERSION, layer.rows, layer.cols),
        np.packbits(layer.mask.live.astype(np.uint8), bitorder="little").tobytes(),
        to_bf16_bits(layer.column_scales).astype("<u2").tobytes(),
        to_bf16_bits(layer.t).astype("<u2").tobytes(),
        table.to_bytes(),
        _STREAM_LENGTH.pack(len(stream)),
        stream,
    ]
    body = b"".join(parts)
    return body + _CRC.pack(zlib.crc32(body))


class _Reader:
    """Cursor over the container body with bounds checks."""

    def __init__(self, buf: bytes, end: int):
        self.buf = buf
        self.end = end
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > self.end:
            raise TruncatedStream(f"Container ends inside the {what}")
        chunk = self.buf[self.pos : self.pos + size]
        self.pos += size
        return chunk


def decode_container(buf: bytes) -> DecodedLayer:
    """
    Parse and validate a container.

    Checks run in order: minimum length, magic, version, CRC32, then field parsing.

    Raises:
        TruncatedStream: If the buffer is too short for its declared content
        BadMagic: If the magic bytes are wrong
        VersionMismatch: If the version is unsupported
        ChecksumFailure: If the CRC32 does not match
    """
    buf = bytes(buf)
    if len(buf) < _HEADER.size + _CRC.size:
        raise TruncatedStream(f"Container has {len(buf)} bytes, less than a header and checksum")
    magic, version, a, n = _HEADER.unpack_from(buf, 0)
    if magic != config.CONTAINER_MAGIC:
        raise BadMagic(f"Expected container magic {config.CONTAINER_MAGIC!r}, found {magic!r}")
    if version != config.CONTAINER_VERSION:
        raise VersionMismatch(f"Unsupported container version {version}")
    body_end = len(buf) - _CRC.size
    (stored,) = _CRC.unpack_from(buf, body_end)
    actual = zlib.crc32(buf[:body_end])
    if stored != actual:
        raise ChecksumFailure(f"CRC32 mismatch: stored {stored:#010x}, computed {actual:#010x}")

    reader = _Reader(buf, body_end)
    reader.take(_HEADER.size, "header")
    mask_bytes = reader.take((n + 7) // 8, "dead-feature mask")
    live = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8), count=n, bitorder="little")
    mask = FeatureMask(live.astype(bool))
    scales = from_bf16_bits(np.frombuffer(reader.take(2 * mask.live_count, "column scales"), dtype="<u2"))
    t = from_bf16_bits(np.frombuffer(reader.take(2 * a, "row gains"), dtype="<u2"))

    table, table_end = HuffmanTable.from_bytes(buf[:body_end], reader.pos)
    reader.pos = table_end
    (stream_len,) = _STREAM_LENGTH.unpack(reader.take(_STREAM_LENGTH.size, "stream length"))
    stream = reader.take(stream_len, "bitstream")
    live_codes = decode(stream, table, a, mask.live_count)

    return DecodedLayer(
        codes=expand(live_codes, mask, axes=(1,)),
        scales=expand(scales, mask, axes=(0,)),
        t=t,
        mask=mask,
    )


def dequantize(buf: bytes) -> np.ndarray:
    """Reconstructed weights straight from container bytes."""
    return decode_container(buf).dequantize()
