"""Exception types shared across the toolkit.

Everything user-facing derives from :class:`DualMsiError`.  Contract
violations (bad inputs, malformed files, mismatched shapes) derive from
:class:`ValidationError` so the CLI can map them to exit code 2, keeping
exit code 3 for plain IO failures.
"""


class DualMsiError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DualMsiError):
    """Input violates a documented precondition or invariant."""


class MissingFrameError(ValidationError):
    """A manifest references a band frame file that does not exist."""

    def __init__(self, wavelength_nm: int, path=None):
        self.wavelength_nm = wavelength_nm
        self.path = path
        msg = f"missing frame for band {wavelength_nm} nm"
        if path is not None:
            msg += f": {path}"
        super().__init__(msg)


class DimensionMismatchError(ValidationError):
    """Frame dimensions disagree with the manifest or with each other."""


class ModeMismatchError(ValidationError):
    """Samples of mixed illumination modes fed to a single-mode operation."""


class UnpairedSampleError(ValidationError):
    """Reflectance/transmittance matrices do not cover the same samples."""


class DegenerateReferenceError(ValidationError):
    """White reference is unusable (all-zero or zero-mean band)."""


class EmptyDataError(ValidationError):
    """An operation that needs at least one value received none."""


class HandshakeTimeoutError(DualMsiError):
    """A simulated party failed to respond within its step budget."""

    def __init__(self, message, transcript=None):
        self.transcript = transcript or []
        super().__init__(message)
