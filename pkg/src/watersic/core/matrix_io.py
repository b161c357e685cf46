"""WSMX binary matrix files used to exchange weights, covariances and samples."""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from watersic.core import config
from watersic.core.errors import BadMagic, TruncatedStream, VersionMismatch
from watersic.core.matcore import as_dense

# magic, version, dtype tag, rows, cols
_HEADER = struct.Struct("<4sIBQQ")


def encode_matrix(m) -> bytes:
    """
    Serialize a float64 matrix to the WSMX layout.

    Args:
        m: 2-D array-like

    Returns:
        Header followed by the little-endian row-major payload
    """
    arr = as_dense(m, "matrix")
    header = _HEADER.pack(
        config.MATRIX_MAGIC,
        config.MATRIX_VERSION,
        config.MATRIX_DTYPE_FLOAT64,
        arr.shape[0],
        arr.shape[1],
    )
    return header + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def decode_matrix(buf: bytes) -> np.ndarray:
    """
    Parse WSMX bytes back into a float64 matrix.

    Raises:
        TruncatedStream: If the buffer is shorter than header plus payload
        BadMagic: If the magic bytes are wrong
        VersionMismatch: If the version or dtype tag is unsupported
    """
    if len(buf) < _HEADER.size:
        raise TruncatedStream(f"Matrix file has {len(buf)} bytes, header needs {_HEADER.size}")
    magic, version, dtype, rows, cols = _HEADER.unpack_from(buf, 0)
    if magic != config.MATRIX_MAGIC:
        raise BadMagic(f"Expected matrix magic {config.MATRIX_MAGIC!r}, found {magic!r}")
    if version != config.MATRIX_VERSION:
        raise VersionMismatch(f"Unsupported matrix version {version}")
    if dtype != config.MATRIX_DTYPE_FLOAT64:
        raise VersionMismatch(f"Unsupported matrix dtype tag {dtype}")

    expected = _HEADER.size + 8 * rows * cols
    if len(buf) < expected:
        raise TruncatedStream(
            f"Matrix {rows}x{cols} needs {expected} bytes, file has {len(buf)}"
        )
    payload = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=_HEADER.size)
    return payload.astype(np.float64).reshape(rows, cols)


def write_matrix(path: Union[str, Path], m) -> None:
    """Write a matrix to a WSMX file."""
    Path(path).write_bytes(encode_matrix(m))


def read_matrix(path: Union[str, Path]) -> np.ndarray:
    """Read a matrix from a WSMX file."""
    return decode_matrix(Path(path).read_bytes())
