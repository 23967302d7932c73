"""Exception and warning types shared across the package."""


class CriticVioError(Exception):
    """Base class for all package-specific errors."""


class ParseError(CriticVioError):
    """A dataset file could not be parsed; message carries the line number."""


class BadRotation(CriticVioError):
    """A rotation block deviates too far from a proper rotation matrix."""


class MissingInterval(CriticVioError):
    """An IMU stream is missing rows for one or more frame intervals."""


class TooShort(CriticVioError):
    """Trajectory is too short for the requested metric subsequences."""


class ShapeMismatch(CriticVioError):
    """Tensor arguments disagree with the documented shapes."""


class UnsupportedChannels(CriticVioError):
    """Image-like input has a channel count the casting layer cannot handle."""


class NonFiniteActivation(CriticVioError):
    """A network produced NaN or infinite activations."""


class NonFiniteGradient(CriticVioError):
    """The gradient-penalty gradient came back NaN or infinite."""


class NonFiniteLoss(CriticVioError):
    """Training produced a non-finite loss; aborts rather than skipping."""


class IncompatibleCheckpoint(CriticVioError):
    """Checkpoint file has an unknown or unsupported format version."""


class GimbalLockWarning(UserWarning):
    """Pitch is at +/- 90 deg; roll/yaw split is resolved by convention."""
