"""Exception types shared across the package."""


class BorderConvError(Exception):
    """Base class for every error raised by borderconv."""


class ShapeError(BorderConvError, ValueError):
    pass


class NonFiniteError(BorderConvError, ValueError):
    pass


class ConfigError(BorderConvError, ValueError):
    pass


class FormatError(BorderConvError, ValueError):
    """A serialized file could not be decoded."""


class CorruptFileError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TrainingDivergedError(BorderConvError, RuntimeError):
    pass
