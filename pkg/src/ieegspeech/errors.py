"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file on disk does not match its declared layout."""


class UnsupportedFormatError(FormatError):
    """A file is well-formed but uses an encoding we do not read."""


class UndefinedResultError(ArithmeticError):
    """A metric has no defined value for the given input."""


class AlignmentError(ValueError):
    """Two streams that must share a frame grid do not."""


class ConfigError(ValueError):
    """Invalid pipeline configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
