"""Exception types shared across the package."""


class DmfaError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(DmfaError):
    """A file does not conform to its declared binary format."""


class WrongKindError(FormatError):
    """The file is valid but holds the wrong kind of payload (e.g. labels)."""


class ShapeError(DmfaError):
    """Array dimensions are inconsistent with what the operation requires."""


class InvalidValueError(DmfaError):
    """A value violates a domain invariant (non-finite, out of range, ...)."""


class NumericalError(DmfaError):
    """A linear-algebra step failed; usually a degenerate covariance."""


class ConfigError(DmfaError):
    """A configuration value is outside its admissible range."""


class EmptyObservedError(DmfaError):
    """Conditioning was requested with no observed coordinates."""


class EmptyMaskError(DmfaError):
    """A masked-loss evaluation was requested with no missing coordinates."""


class DivergedError(DmfaError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
