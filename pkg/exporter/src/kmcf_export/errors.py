"""Exception taxonomy for the exporter."""


class ExportError(Exception):
    """Base class for everything this package raises on purpose."""


class ParseError(ExportError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class LayoutError(ExportError):
    """Sequence directory does not look like an image sequence."""


class MissingWeightsError(ExportError):
    """No usable network weights were provided."""


class ConfigMismatchError(ExportError):
    """Explicit export geometry contradicts the tracker config file."""
