"""Exceptions raised by the quantization library."""


class WaterSICError(ValueError):
    """Base class for every error the library raises on bad input or state."""


class DimensionMismatch(WaterSICError):
    """Operand shapes are inconsistent."""


class NotPositiveDefinite(WaterSICError):
    """Cholesky hit a pivot that is not safely positive."""


class AllDead(WaterSICError):
    """Every input dimension was classified as a dead feature."""


class NonPositiveScale(WaterSICError):
    """A spacing or scale constant is not strictly positive."""


class CodeOverflow(WaterSICError):
    """An integer code does not fit in 32 bits."""


class SingularSystem(WaterSICError):
    """The Gamma-step normal equations are singular."""


class DegenerateRow(WaterSICError):
    """A T-step denominator is zero."""


class InvalidBracket(WaterSICError):
    """A search interval is empty or inverted."""


class EmptySamples(WaterSICError):
    """No calibration samples were supplied."""


class InvalidMixParameter(WaterSICError):
    """A mixing coefficient lies outside [0, 1]."""


class EmptyHistogram(WaterSICError):
    """A histogram holds no symbols."""


class UnknownSymbol(WaterSICError):
    """A symbol has no code in the Huffman table."""


class TruncatedStream(WaterSICError):
    """A byte stream ended before the expected content."""


class InvalidCode(WaterSICError):
    """A bit pattern matches no Huffman code."""


class BracketMiss(WaterSICError):
    """The target rate lies outside the scale bracket."""


class ExhaustedBudget(WaterSICError):
    """No bits are left for the remaining layers."""


class DistortionOutOfRange(WaterSICError):
    """A target distortion is outside (0, full energy]."""


class PreconditionViolated(WaterSICError):
    """A formula was evaluated outside its validity range."""


class BadMagic(WaterSICError):
    """A binary file does not start with the expected magic bytes."""


class VersionMismatch(WaterSICError):
    """A binary file carries an unsupported format version."""


class ChecksumFailure(WaterSICError):
    """The stored CRC32 does not match the content."""
