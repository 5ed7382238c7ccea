"""Exception hierarchy shared across the package.

Data-shaped problems (bad files, bad shapes, bad timestamps) derive from
:class:`DataError`; failures of the estimation machinery itself derive from
:class:`EstimationError`.  The CLI maps these to distinct exit codes.
"""


class JointKinError(Exception):
    """Base class for all package-specific errors."""


class DataError(JointKinError):
    """Input data is malformed, inconsistent, or unusable."""


class EstimationError(JointKinError):
    """An estimation step cannot produce a valid result."""


# -- math / geometry -----------------------------------------------------

class DegenerateAxis(JointKinError):
    """A rotation axis with (near-)zero norm was supplied."""


class DegenerateFusion(EstimationError):
    """Weighted quaternion sum collapsed to zero norm."""


class DegenerateAxisPair(EstimationError):
    """Two joint axes are (anti)parallel; their cross product is undefined."""


class DegenerateGeometry(JointKinError):
    """Joint geometry does not define a body frame (axis parallel to lever)."""


# -- streams / files -----------------------------------------------------

class TimeOrderError(DataError):
    """Timestamps are not strictly increasing."""


class InvalidSample(DataError):
    """A sample contains non-finite values."""


class SchemaError(DataError):
    """A file does not match the expected column schema."""


class ShapeError(DataError):
    """Array arguments have incompatible lengths or shapes."""


class TooShort(DataError):
    """A stream is too short for the requested processing step."""


class StreamGap(DataError):
    """A gap longer than the configured limit was found in a stream."""


class EventOutOfRange(DataError):
    """A sensor-movement event lies outside the stream's time span."""


# -- solvers / estimation ------------------------------------------------

class EmptyWindow(EstimationError):
    """An estimation window contains no samples."""


class InsufficientMotion(EstimationError):
    """Window excitation is below the identifiability gate."""


class SingularSystem(EstimationError):
    """Normal equations are singular beyond what damping can absorb."""


class NonFiniteResidual(EstimationError):
    """The residual function returned NaN or infinity at an iterate."""


# -- metrics -------------------------------------------------------------

class ZeroRange(DataError):
    """Reference series has zero range; percent error undefined."""


class ZeroVariance(DataError):
    """A series is constant; correlation undefined."""


class IncompleteTable(DataError):
    """A metric table is missing required cells."""
