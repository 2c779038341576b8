"""Exception types shared across the package."""


class MergeLabError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(MergeLabError, ValueError):
    """An argument is non-finite or otherwise outside an operation's domain."""


class ShapeError(MergeLabError, ValueError):
    """Array widths or shapes do not match what an operation expects."""


class SchemaError(MergeLabError, ValueError):
    """A trajectory file is missing a required column or has a bad layout."""


class TimingError(MergeLabError, ValueError):
    """Timestamps in a trajectory file are not uniformly spaced."""


class ParseError(MergeLabError, ValueError):
    """A trajectory file contains a non-finite or unparseable field."""


class ModelLoadError(MergeLabError, ValueError):
    """Base class for model-file loading failures."""


class ModelVersionError(ModelLoadError):
    """Model file declares an unsupported format version."""


class ModelDimensionError(ModelLoadError):
    """Model file parameter shapes disagree with its declared dimensions."""


class ModelFormatError(ModelLoadError):
    """Model file is truncated, not valid JSON, or missing required keys."""


class SolverError(MergeLabError, RuntimeError):
    """The MPC solver encountered a non-finite objective it could not recover from."""
