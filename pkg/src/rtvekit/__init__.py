"""Non-neural tooling for broadcast-TV speech recognition pipelines.

Transcript formats and WER scoring, ROVER fusion, back-off n-gram language
models, lightly supervised transcript retrieval from subtitles and
WADA-SNR gated speech enhancement.
"""

__version__ = "0.1.0"


class RtveError(Exception):
    """Base class for errors raised by this package."""


class ParseError(RtveError, ValueError):
    """Malformed input that cannot be parsed."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ValidationError(RtveError, ValueError):
    """Well-formed input that violates a domain invariant."""


class ConfigError(RtveError):
    """Bad configuration detected before processing starts."""
