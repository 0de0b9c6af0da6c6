"""Exception hierarchy.

Everything raised on purpose derives from :class:`DriveStyleError`; the CLI
maps :class:`InputError` subclasses to exit code 2 and
:class:`NumericalError` subclasses to exit code 3.
"""


class DriveStyleError(Exception):
    """Base class for all package errors."""


class InputError(DriveStyleError, ValueError):
    """Bad input data or configuration."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(DriveStyleError, ArithmeticError):
    """Numerical failure inside the sampler or the HMM kernels."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


# ingest
class EmptyInput(InputError):
    pass


class MalformedRow(InputError):
    pass


class NonMonotonicTime(InputError):
    pass


class NonUniformTime(InputError):
    pass


class ShortLine(InputError):
    pass


class NonNumericField(InputError):
    pass


class TooShort(InputError):
    pass


# hmm-core
class DimensionMismatch(InputError):
    pass


class TooLarge(InputError):
    pass


class NonSPDCovariance(NumericalError):
    pass


class NonSPDPsi(InputError):
    pass


# sticky-hdphmm / ranking / scenario
class LengthMismatch(InputError):
    pass


class ConfigError(InputError):
    pass


class EmptyCluster(InputError):
    pass


class EmptyPart(InputError):
    pass


class DuplicateCluster(InputError):
    pass


class MalformedLine(InputError):
    pass


class UnknownType(InputError):
    pass


class UnknownCluster(InputError):
    pass


class FrameMisalignment(InputError):
    pass
