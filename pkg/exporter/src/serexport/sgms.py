"""SGM1 reading, SGM1-S writing, and the geometry digest.

Implemented against FORMATS.md so files interchange with the pipeline:
space-separated text, floats at 17 significant digits, and a 12-hex-char
SHA-256 digest over the canonical spectrogram-geometry string.
"""

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SpectroGeometry:
    n_fft: int = 1024
    win_length: int = 480
    hop_length: int = 240
    n_mels: int = 128
    sample_rate: int = 16000
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def digest(self) -> str:
        fmax = self.sample_rate / 2 if self.fmax is None else self.fmax
        canon = (
            f"n_fft={self.n_fft} win_length={self.win_length} "
            f"hop_length={self.hop_length} n_mels={self.n_mels} "
            f"sample_rate={self.sample_rate} fmin={float(self.fmin)!r} "
            f"fmax={float(fmax)!r} log_floor={float(self.log_floor)!r}"
        )
        return hashlib.sha256(canon.encode("ascii")).hexdigest()[:12]


def _check_token(value: str, what: str) -> str:
    if not value or any(c.isspace() for c in value):
        raise ValueError(f"{what} must be a non-empty whitespace-free token, "
                         f"got {value!r}")
    return value


def _fmt_row(row) -> str:
    return " ".join(format(float(v), ".17g") for v in row)


def read_sgm(path) -> tuple[np.ndarray, str]:
    """Read an SGM1 spectrogram file; returns (matrix, source_id)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: SGM1 header must be 'H W source_id'")
        h, w = int(header[0]), int(header[1])
        if h <= 0 or w <= 0:
            raise ValueError(f"{path}: non-positive dimensions {h}x{w}")
        data = np.empty((h, w), dtype=np.float64)
        for i in range(h):
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: file ended after {i} of {h} rows")
            parts = line.split()
            if len(parts) != w:
                raise ValueError(f"{path}: row {i} has {len(parts)} values, "
                                 f"expected {w}")
            data[i] = [float(p) for p in parts]
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values in matrix")
    return data, header[2]


def write_sgms(data: np.ndarray, method: str, target_label: str,
               config_digest: str, path) -> None:
    """Write an SGM1-S saliency map: `H W method target digest` + rows."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.size == 0:
        raise ValueError("saliency map must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(data)):
        raise ValueError("saliency map contains non-finite values")
    h, w = data.shape
    header = " ".join([str(h), str(w),
                       _check_token(method, "method"),
                       _check_token(target_label, "target_label"),
                       _check_token(config_digest, "config_digest")])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(_fmt_row(row) + "\n")
