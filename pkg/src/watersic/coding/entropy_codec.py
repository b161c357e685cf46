"""Empirical entropy, effective rate and canonical Huffman coding of code matrices."""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from watersic.core import config
from watersic.core.errors import (
    DimensionMismatch,
    EmptyHistogram,
    InvalidCode,
    TruncatedStream,
    UnknownSymbol,
)

# min_symbol, symbol count
_TABLE_HEADER = struct.Struct("<iI")
_MAX_CODE_LENGTH = 64


@dataclass(frozen=True, eq=False)
class SymbolHistogram:
    """Counts of every integer symbol between min_symbol and max_symbol inclusive."""

    min_symbol: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).copy()
        if counts.ndim != 1 or counts.size == 0 or counts.sum() == 0:
            raise EmptyHistogram("Histogram holds no symbols")
        if np.any(counts < 0):
            raise ValueError("Histogram counts must be non-negative")
        # Keep the range tight: both ends must be occupied
        present = np.flatnonzero(counts)
        counts = counts[present[0] : present[-1] + 1]
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "min_symbol", int(self.min_symbol) + int(present[0]))

    @property
    def max_symbol(self) -> int:
        return self.min_symbol + self.counts.shape[0] - 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def alphabet_size(self) -> int:
        return int(np.count_nonzero(self.counts))

    @staticmethod
    def from_codes(codes) -> SymbolHistogram:
        """Histogram of every entry of an integer array."""
        flat = np.asarray(codes, dtype=np.int64).ravel()
        if flat.size == 0:
            raise EmptyHistogram("Cannot build a histogram from an empty code matrix")
        lo = int(flat.min())
        return SymbolHistogram(lo, np.bincount(flat - lo))

    def as_dict(self) -> Dict[int, int]:
        return {
            self.min_symbol + int(i): int(c) for i, c in enumerate(self.counts) if c > 0
        }


def entropy_bits(hist: SymbolHistogram) -> float:
    """Empirical entropy -sum p log2 p of a histogram, in bits per symbol."""
    p = hist.counts[hist.counts > 0] / hist.total
    return max(0.0, float(-np.sum(p * np.log2(p))))


def column_entropy_bits(codes) -> float:
    """Mean over columns of each column's empirical entropy."""
    z = np.asarray(codes)
    if z.ndim != 2 or z.size == 0:
        raise EmptyHistogram(f"Need a non-empty code matrix, got shape {z.shape}")
    return float(np.mean([entropy_bits(SymbolHistogram.from_codes(z[:, j])) for j in range(z.shape[1])]))


def layer_entropy(codes, mode: str = config.ENTROPY_JOINT) -> float:
    """
    Entropy term of the rate in bits per coded weight.

    joint: one histogram over the whole matrix. column: per-column entropies averaged.
    """
    if mode == config.ENTROPY_JOINT:
        return entropy_bits(SymbolHistogram.from_codes(codes))
    if mode == config.ENTROPY_COLUMN:
        return column_entropy_bits(codes)
    raise ValueError(f"Unknown entropy mode {mode!r}; expected one of {config.ENTROPY_MODES}")


def effective_rate(h: float, a: int, n: int) -> float:
    """Entropy plus 16-bit side information for each row and each column."""
    if a < 1 or n < 1:
        raise DimensionMismatch(f"Layer dimensions must be positive, got {a}x{n}")
    return h + config.SIDE_INFO_BITS / a + config.SIDE_INFO_BITS / n


@dataclass(frozen=True, eq=False)
class HuffmanTable:
    """
    Canonical Huffman code stored as one length per symbol of a contiguous range.

    A length of zero marks a symbol with no code. Codes are assigned in order of
    (length, symbol), so the lengths alone determine the table.
    """

    min_symbol: int
    lengths: np.ndarray
    codes: np.ndarray = field(init=False, repr=False)
    max_length: int = field(init=False, repr=False)
    _first: List[int] = field(init=False, repr=False)
    _count: List[int] = field(init=False, repr=False)
    _offset: List[int] = field(init=False, repr=False)
    _sorted_symbols: List[int] = field(init=False, repr=False)

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.int64).copy()
        if lengths.ndim != 1 or lengths.size == 0 or not np.any(lengths):
            raise InvalidCode("Huffman table has no coded symbols")
        if np.any(lengths < 0) or np.any(lengths > _MAX_CODE_LENGTH):
            raise InvalidCode(f"Code lengths must lie in [0, {_MAX_CODE_LENGTH}]")
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "min_symbol", int(self.min_symbol))

        if self.kraft_sum() > 1.0:
            raise InvalidCode(f"Code lengths violate the Kraft inequality ({self.kraft_sum()})")

        order = sorted(
            (int(length), idx) for idx, length in enumerate(lengths) if length > 0
        )
        max_len = order[-1][0]
        counts = np.zeros(max_len + 1, dtype=np.int64)
        codes = np.zeros(lengths.shape[0], dtype=np.uint64)
        code = 0
        prev_len = 0
        for length, idx in order:
            code <<= length - prev_len
            codes[idx] = code
            counts[length] += 1
            code += 1
            prev_len = length

        first = np.zeros(max_len + 1, dtype=np.int64)
        offset = np.zeros(max_len + 1, dtype=np.int64)
        code = 0
        seen = 0
        for length in range(1, max_len + 1):
            first[length] = code
            offset[length] = seen
            seen += counts[length]
            code = (code + counts[length]) << 1

        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "max_length", max_len)
        object.__setattr__(self, "_first", first.tolist())
        object.__setattr__(self, "_count", counts.tolist())
        object.__setattr__(self, "_offset", offset.tolist())
        object.__setattr__(self, "_sorted_symbols", [self.min_symbol + idx for _, idx in order])

    def kraft_sum(self) -> float:
        present = self.lengths[self.lengths > 0]
        return float(np.sum(np.exp2(-present.astype(np.float64))))

    def code_lengths(self) -> Dict[int, int]:
        """Mapping symbol -> code length for every coded symbol."""
        return {
            self.min_symbol + int(i): int(n) for i, n in enumerate(self.lengths) if n > 0
        }

    def average_length(self, hist: SymbolHistogram) -> float:
        """Mean code length in bits per symbol under the histogram's distribution."""
        total_bits = 0
        for symbol, count in hist.as_dict().items():
            idx = symbol - self.min_symbol
            if idx < 0 or idx >= self.lengths.shape[0] or self.lengths[idx] == 0:
                raise UnknownSymbol(f"Symbol {symbol} has no code in the table")
            total_bits += count * int(self.lengths[idx])
        return total_bits / hist.total

    def to_bytes(self) -> bytes:
        """i32 min_symbol, u32 symbol count, then one u8 length per symbol."""
        return _TABLE_HEADER.pack(self.min_symbol, self.lengths.shape[0]) + self.lengths.astype(np.uint8).tobytes()

    @staticmethod
    def from_bytes(buf: bytes, offset: int = 0) -> Tuple[HuffmanTable, int]:
        """
        Parse a serialized table.

        Returns:
            Tuple of (table, offset just past the table)
        """
        if len(buf) - offset < _TABLE_HEADER.size:
            raise TruncatedStream("Huffman table header is truncated")
        min_symbol, count = _TABLE_HEADER.unpack_from(buf, offset)
        start = offset + _TABLE_HEADER.size
        end = start + count
        if len(buf) < end:
            raise TruncatedStream(f"Huffman table needs {count} length bytes, {len(buf) - start} remain")
        lengths = np.frombuffer(buf, dtype=np.uint8, count=count, offset=start)
        return HuffmanTable(min_symbol, lengths.astype(np.int64)), end


def build_huffman(hist: SymbolHistogram) -> HuffmanTable:
    """
    Optimal prefix code lengths for a histogram.

    Ties in the merge order are broken by node creation order, so identical
    histograms always produce identical tables. A single-symbol alphabet gets a
    1-bit code.
    """
    present = [(int(c), idx) for idx, c in enumerate(hist.counts) if c > 0]
    lengths = np.zeros(hist.counts.shape[0], dtype=np.int64)
    if len(present) == 1:
        lengths[present[0][1]] = 1
        return HuffmanTable(hist.min_symbol, lengths)

    heap: List[Tuple[int, int, List[int]]] = [(c, idx, [idx]) for c, idx in present]
    heapq.heapify(heap)
    next_id = hist.counts.shape[0]
    while len(heap) > 1:
        c1, _, leaves1 = heapq.heappop(heap)
        c2, _, leaves2 = heapq.heappop(heap)
        merged = leaves1 + leaves2
        lengths[merged] += 1
        heapq.heappush(heap, (c1 + c2, next_id, merged))
        next_id += 1

    return HuffmanTable(hist.min_symbol, lengths)


def encode(z, table: HuffmanTable) -> bytes:
    """
    Entropy-code a matrix column by column.

    Bits are written MSB-first and the final byte is padded with zeros.

    Raises:
        UnknownSymbol: If an entry has no code in the table
    """
    codes = np.asarray(z)
    if codes.ndim != 2:
        raise DimensionMismatch(f"Code matrix must be 2-D, got shape {codes.shape}")
    idx = codes.T.ravel().astype(np.int64) - table.min_symbol
    if idx.size == 0:
        return b""
    clipped = np.clip(idx, 0, table.lengths.shape[0] - 1)
    unknown = np.flatnonzero((idx != clipped) | (table.lengths[clipped] == 0))
    if unknown.size:
        symbol = int(idx[unknown[0]]) + table.min_symbol
        raise UnknownSymbol(f"Symbol {symbol} has no code in the table")

    lens = table.lengths[idx]
    values = table.codes[idx]
    starts = np.cumsum(lens) - lens
    bits = np.zeros(int(lens.sum()), dtype=np.uint8)
    for b in range(table.max_length):
        sel = lens > b
        shift = (lens[sel] - 1 - b).astype(np.uint64)
        bits[starts[sel] + b] = (values[sel] >> shift) & np.uint64(1)
    return np.packbits(bits).tobytes()


def decode(bitstream: bytes, table: HuffmanTable, a: int, n: int) -> np.ndarray:
    """
    Decode a column-major stream of a * n symbols back into an a x n int32 matrix.

    Raises:
        TruncatedStream: If the bits run out before a * n symbols
        InvalidCode: If a bit pattern matches no code
    """
    count = a * n
    bits = np.unpackbits(np.frombuffer(bitstream, dtype=np.uint8)).tolist()
    first, counts, offsets = table._first, table._count, table._offset
    symbols = table._sorted_symbols
    max_len = table.max_length

    out = np.empty(count, dtype=np.int64)
    pos = 0
    total_bits = len(bits)
    for k in range(count):
        code = 0
        length = 0
        while True:
            if pos >= total_bits:
                raise TruncatedStream(f"Bitstream ended after {k} of {count} symbols")
            code = (code << 1) | bits[pos]
            pos += 1
            length += 1
            delta = code - first[length]
            if 0 <= delta < counts[length]:
                out[k] = symbols[offsets[length] + delta]
                break
            if length == max_len:
                raise InvalidCode(f"No code matches the bits ending at position {pos}")

    return np.ascontiguousarray(out.reshape(n, a).T).astype(np.int32)


def codec_rate_check(z) -> Tuple[float, float]:
    """
    Compare the empirical entropy of a code matrix with its Huffman cost.

    Returns:
        Tuple of (entropy, average Huffman length), both in bits per symbol
    """
    hist = SymbolHistogram.from_codes(z)
    table = build_huffman(hist)
    return entropy_bits(hist), table.average_length(hist)
