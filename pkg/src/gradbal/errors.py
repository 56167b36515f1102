"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""


class DataFormatError(ValueError):
    """Malformed on-disk data; the message cites the location when known."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite or blew past the divergence guard.

    ``reports`` carries the epoch reports produced before the abort so
    partial results can be preserved.
    """

    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = list(reports) if reports is not None else []
