"""Exception hierarchy shared by all modules."""


class HoughVoteError(Exception):
    """Base class for library errors."""


class ConfigError(HoughVoteError, ValueError):
    """Invalid vote-field or evaluation configuration."""


class ShapeError(HoughVoteError, ValueError):
    """Array shapes do not agree with each other or with the vote field."""


class ValidationError(HoughVoteError, ValueError):
    """Input values violate a precondition (non-finite, out of range, ...)."""


class IntegrityError(HoughVoteError, ValueError):
    """Annotation file is malformed or has dangling references."""


class TensorFormatError(HoughVoteError, ValueError):
    """HVT tensor file is corrupt or has the wrong magic."""
