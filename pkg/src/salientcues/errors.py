"""Exception types shared across the toolkit.

Bad arguments raise plain ValueError; these classes cover input-data and
transport failures that callers are expected to isolate per utterance.
"""


class SalientCuesError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SalientCuesError):
    """A file does not conform to its declared on-disk format."""


class UnsupportedFormatError(FormatError):
    """The file format is recognized but not supported (e.g. non-PCM WAV)."""


class EmptyInputError(SalientCuesError):
    """An input carries no usable payload."""


class TooShortError(SalientCuesError):
    """A signal is shorter than one analysis frame."""


class ShapeError(SalientCuesError):
    """Matrix dimensions do not match what the consumer declared."""


class GeometryMismatchError(SalientCuesError):
    """An imported map was produced under a different spectrogram geometry."""


class DataError(SalientCuesError):
    """Numeric payload violates an invariant (NaN/Inf, bad range)."""


class TransportError(SalientCuesError):
    """An external oracle endpoint is unreachable or the connection broke."""


class ProtocolError(SalientCuesError):
    """An external oracle replied with a malformed or invalid record."""
