"""Exception hierarchy shared by all varblur modules."""


class VarblurError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(VarblurError, ValueError):
    """Shapes of two collaborating objects do not agree."""


class InvariantError(VarblurError, ValueError):
    """A constructor received data violating a type invariant.

    The offending :class:`~varblur.core.ValidationReport` is kept on
    ``report`` so callers can print the location.
    """

    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


class FormatError(VarblurError):
    """A binary container could not be decoded."""


class TruncatedFileError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass
