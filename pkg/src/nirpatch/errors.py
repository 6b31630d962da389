"""Exception hierarchy shared across the toolkit.

Everything raised on purpose derives from NirPatchError so callers can fence
off toolkit failures from genuine bugs with a single except clause. The CLI
maps these onto exit codes (config/usage -> 1, oracle -> 2, attack -> 3).
"""


class NirPatchError(Exception):
    """Base class for all toolkit errors."""


# --- image and file I/O -----------------------------------------------------

class UnsupportedFormat(NirPatchError):
    """File is not binary PGM (maxval 255) or 8-bit grayscale PNG."""


class CorruptHeader(NirPatchError):
    """Header cannot be parsed, or the payload ends before the declared size."""


class DimensionMismatch(NirPatchError):
    """Shapes disagree: trailing payload bytes, or arrays with unequal dims."""


class IoFailure(NirPatchError):
    """Underlying OS error while reading or writing a file."""


class MaskNotBinary(NirPatchError):
    """Mask pixels must be exactly 0 or 1 (0 or 255 on disk)."""


# --- numeric domains ---------------------------------------------------------

class InvalidRange(NirPatchError):
    """Interval or count arguments out of order or out of domain."""


class IndexOutOfRange(NirPatchError):
    """Index past the end of a genome, population, or gallery."""


class InvalidAngle(NirPatchError):
    """Angle outside the hemisphere domain of the reflectance terms."""


class GrazingSingularity(NirPatchError):
    """Specular denominator vanished: cos(theta_l) * cos(theta_v) below 1e-6."""


# --- geometry ----------------------------------------------------------------

class TooFewVertices(NirPatchError):
    """Closed spline needs at least 3 control vertices."""


class OpenContour(NirPatchError):
    """Contour endpoints further apart than the closure tolerance."""


class GenomeFormatError(NirPatchError):
    """Genome document rejected: wrong fields, shapes, or m < 1 / n < 3."""


class ShapeMismatch(NirPatchError):
    """Vector operands of unequal length."""


# --- optimization ------------------------------------------------------------

class PopulationTooSmall(NirPatchError):
    """Differential mutation needs at least 4 individuals."""


class InvalidLabel(NirPatchError):
    """Label missing from the gallery, or target == true identity."""


class AttackAborted(NirPatchError):
    """Oracle failed mid-attack; carries the partial result accumulated so far."""

    def __init__(self, message, partial_result=None):
        super().__init__(message)
        self.partial_result = partial_result


# --- oracle / protocol -------------------------------------------------------

class ScorerFailure(NirPatchError):
    """External scorer returned an error or died."""


class ScorerTimeout(NirPatchError):
    """No response from the external scorer within the deadline."""


class ProtocolViolation(NirPatchError):
    """Response was not a valid protocol message."""


# --- configuration -----------------------------------------------------------

class InvalidConfig(NirPatchError):
    """Config document rejected during validation."""
