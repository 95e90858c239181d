"""Helpers for the line-oriented text formats (SGM1, SEG1, CUE1, LAB1).

All numbers are written with 17 significant digits so every float
round-trips bit-exactly, independent of locale.
"""

import hashlib

import numpy as np

from .errors import DataError, FormatError


def fmt_float(x) -> str:
    return format(float(x), ".17g")


def fmt_row(values) -> str:
    return " ".join(fmt_float(v) for v in values)


def parse_floats(line: str, expected: int, context: str) -> np.ndarray:
    parts = line.split()
    if len(parts) != expected:
        raise FormatError(f"{context}: expected {expected} values, got {len(parts)}")
    try:
        row = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{context}: non-numeric value ({exc})") from exc
    return row


def require_finite(a: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(a)):
        raise DataError(f"{context}: NaN or Inf entries present")


def check_token(token: str, name: str) -> str:
    """Header tokens are whitespace-delimited, so they must not contain any."""
    if not token or any(c.isspace() for c in token):
        raise ValueError(f"{name} must be non-empty and contain no whitespace: {token!r}")
    return token


def file_digest(path) -> str:
    """First 12 hex chars of the SHA-256 of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()[:12]
