"""Exception hierarchy shared across the toolkit.

Three broad families so the CLI can map them to distinct exit codes:
data errors (bad files, bad datasets), config errors (incompatible or
out-of-range settings), and numeric errors (NaN/Inf escapes).
"""


class DescatterError(Exception):
    """Base class for all toolkit errors."""


class DataError(DescatterError):
    """Malformed or missing input data."""


class ConfigError(DescatterError):
    """Invalid or incompatible configuration."""


class NumericError(DescatterError):
    """Numerical failure (non-finite values, divergence)."""


# --- data ---

class NotFound(DataError):
    pass


class IoFailure(DataError):
    pass


class MalformedLength(DataError):
    """File size is not a multiple of the record size."""


class UnknownClassId(DataError):
    """Label value outside {0, 1} with no remap table supplied."""


class DatasetEmpty(DataError):
    pass


class InsufficientSequences(DataError):
    pass


class MisalignedFrames(DataError):
    """Prediction files do not line up with the ground-truth manifest."""


class TooFewPoints(DataError):
    pass


# --- config ---

class ShapeMismatch(ConfigError):
    pass


class LengthMismatch(ConfigError):
    pass


class ConfigMismatch(ConfigError):
    pass


class InvalidParams(ConfigError):
    pass


class OutOfRange(ConfigError):
    pass


# --- numeric ---

class NonFiniteValue(NumericError):
    pass


class ZeroRange(NumericError):
    """Point at the sensor origin cannot be projected."""


class NonFiniteGradient(NumericError):
    pass


class DivergenceDetected(NumericError):
    """Training loss became NaN/Inf."""
