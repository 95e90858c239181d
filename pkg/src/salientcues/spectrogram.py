"""Log-Mel spectrogram front-end with an exact frame-to-sample mapping.

Frames are never centered: frame t covers samples [t*hop, t*hop + win), so
segment time indices project back onto the waveform without any padding
bookkeeping. Analysis constants not pinned elsewhere: periodic Hann window,
HTK mel scale, unit-peak triangular filters, natural log with a 1e-10 floor.
"""

from dataclasses import dataclass
import hashlib

import numpy as np
from scipy.signal import get_window

from .audio_io import Waveform
from .errors import FormatError, TooShortError
from .textio import check_token, fmt_row, parse_floats, require_finite


@dataclass(frozen=True)
class SpectroConfig:
    n_fft: int = 1024
    win_length: int = 480
    hop_length: int = 240
    n_mels: int = 128
    sample_rate: int = 16000
    fmin: float = 0.0
    fmax: float | None = None  # None means sample_rate / 2
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.win_length > self.n_fft:
            raise ValueError("win_length must not exceed n_fft")
        if self.hop_length < 1 or self.n_mels < 1 or self.win_length < 1:
            raise ValueError("hop_length, win_length and n_mels must be >= 1")
        if not (0 <= self.fmin < self.fmax_hz <= self.sample_rate / 2):
            raise ValueError("need fmin < fmax <= sample_rate/2")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def fmax_hz(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    def digest(self) -> str:
        """12-hex-char checksum binding saliency maps to this geometry.

        Canonical string uses shortest round-trip decimals (Python repr)
        for the float fields; see FORMATS.md.
        """
        canon = (
            f"n_fft={self.n_fft} win_length={self.win_length} "
            f"hop_length={self.hop_length} n_mels={self.n_mels} "
            f"sample_rate={self.sample_rate} fmin={float(self.fmin)!r} "
            f"fmax={float(self.fmax_hz)!r} log_floor={float(self.log_floor)!r}"
        )
        return hashlib.sha256(canon.encode("ascii")).hexdigest()[:12]


@dataclass(eq=False)
class LogMelSpectrogram:
    data: np.ndarray  # (n_mels, n_frames)
    config: SpectroConfig
    source_id: str = ""

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def n_frames_for(n_samples: int, cfg: SpectroConfig) -> int:
    if n_samples < cfg.win_length:
        raise TooShortError(
            f"waveform of {n_samples} samples is shorter than one {cfg.win_length}-sample window")
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def stft_power(w: Waveform, cfg: SpectroConfig) -> np.ndarray:
    """Magnitude-squared STFT, shape (n_fft//2 + 1, n_frames)."""
    n = n_frames_for(len(w), cfg)
    window = get_window("hann", cfg.win_length, fftbins=True)
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n)[:, None]
    frames = w.samples[idx] * window
    spec = np.fft.rfft(frames, n=cfg.n_fft, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f) -> np.ndarray:
    """HTK mel scale: mel(f) = 2595 log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: SpectroConfig) -> np.ndarray:
    """Unit-peak triangular filters, centers equally spaced on the mel scale.

    Shape (n_mels, n_fft//2 + 1). No area normalization: absolute scale is
    irrelevant because the classifier and the explanation pipeline consume
    the same representation.
    """
    n_bins = cfg.n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, center, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - lo) / (center - lo)
        down = (hi - bin_freqs) / (hi - center)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel(w: Waveform, cfg: SpectroConfig) -> LogMelSpectrogram:
    """Natural-log Mel spectrogram: ln(max(filterbank @ power, log_floor))."""
    power = stft_power(w, cfg)
    mel = mel_filterbank(cfg) @ power
    data = np.log(np.maximum(mel, cfg.log_floor))
    return LogMelSpectrogram(data=data, config=cfg, source_id=w.source_id)


def frame_to_samples(frame_start: int, frame_end_exclusive: int, cfg: SpectroConfig,
                     n_frames: int | None = None,
                     n_samples: int | None = None) -> tuple[int, int]:
    """Project a frame span [start, end) to the sample span it analyzed.

    With no centering this is exact: [start*hop, (end-1)*hop + win), clipped
    to `n_samples` when the waveform length is known.
    """
    if not 0 <= frame_start < frame_end_exclusive:
        raise ValueError(
            f"need 0 <= frame_start < frame_end_exclusive, got [{frame_start}, {frame_end_exclusive})")
    if n_frames is not None and frame_end_exclusive > n_frames:
        raise ValueError(
            f"frame_end_exclusive {frame_end_exclusive} beyond map width {n_frames}")
    lo = frame_start * cfg.hop_length
    hi = (frame_end_exclusive - 1) * cfg.hop_length + cfg.win_length
    if n_samples is not None:
        lo = min(lo, n_samples)
        hi = min(hi, n_samples)
    return lo, hi


# SGM1: line 1 "H W source_id", then H rows of W space-separated floats.

def write_sgm(spec: LogMelSpectrogram, path) -> None:
    h, w = spec.data.shape
    if h == 0 or w == 0:
        raise ValueError("refusing to write an empty spectrogram")
    sid = check_token(spec.source_id or "unknown", "source_id")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{h} {w} {sid}\n")
        for row in spec.data:
            fh.write(fmt_row(row) + "\n")


def read_sgm(path) -> tuple[np.ndarray, str]:
    """Read an SGM1 file; returns (matrix, source_id)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise FormatError(f"{path}: SGM1 header must be 'H W source_id'")
        try:
            h, w = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(f"{path}: bad SGM1 dimensions") from exc
        if h < 1 or w < 1:
            raise FormatError(f"{path}: non-positive SGM1 dimensions")
        data = np.empty((h, w))
        for i in range(h):
            line = fh.readline()
            if not line:
                raise FormatError(f"{path}: expected {h} rows, file ended at row {i}")
            data[i] = parse_floats(line, w, f"{path}:row {i}")
    require_finite(data, str(path))
    return data, header[2]
