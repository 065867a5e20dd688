"""
Domain errors for rotor splatting.

Every error derives from ValueError so callers that only guard against bad
input (the CLI, the config parser) can keep catching ValueError.
"""


class RotorSplattingError(ValueError):
    """Base class for all domain errors"""


class ZeroRotorError(RotorSplattingError):
    """Rotor with all eight coefficients (numerically) zero"""


class NotNormalizedError(RotorSplattingError):
    """Rotor violates r r† = 1 beyond tolerance"""


class NonFiniteError(RotorSplattingError):
    """Computation produced a non-finite value"""


class NotUnitError(RotorSplattingError):
    """Quaternion is not of unit length"""


class DegenerateTimeError(RotorSplattingError):
    """Temporal variance W collapsed below the slicing floor"""


class CulledError(RotorSplattingError):
    """Splat rejected by near plane, screen extent or minimum alpha"""


class MissingRecordsError(RotorSplattingError):
    """Backward pass requested without forward blend records"""


class ShapeMismatchError(RotorSplattingError):
    """Arrays that must align have different shapes"""


class TooFewPointsError(RotorSplattingError):
    """Not enough points for the requested neighbour count"""


class StaleIndexError(RotorSplattingError):
    """Neighbour index was built for a different store size"""


class EmptySourceError(RotorSplattingError):
    """Initialization source yields no points"""


class MissingFileError(RotorSplattingError):
    """Expected dataset or checkpoint file does not exist"""


class MalformedJsonError(RotorSplattingError):
    """JSON input does not parse or does not match its schema"""


class NonInvertiblePoseError(RotorSplattingError):
    """Camera pose rotation block is not orthogonal"""


class InvalidSpecError(RotorSplattingError):
    """Synthetic scene specification is invalid"""


class CheckpointFormatError(RotorSplattingError):
    """Checkpoint has bad magic, wrong version or is truncated"""


class ConfigError(RotorSplattingError):
    """Configuration key or value is invalid"""


class NonFiniteLossError(RotorSplattingError):
    """Training loss became non-finite"""
