"""Waveform loading and preprocessing.

Pipeline order is load -> trim_silence -> resample -> fix_duration. Trimming
runs before duration fixing so zero-padding is never trimmed away, and at the
file's native rate so the energy frame grid is exact.
"""

from dataclasses import dataclass, replace
from fractions import Fraction
import struct

import numpy as np
from scipy.signal import resample_poly

from .errors import EmptyInputError, FormatError, UnsupportedFormatError

TRIM_FRAME_S = 0.025
TRIM_HOP_S = 0.010

# scipy.signal.resample_poly default: polyphase windowed-sinc, Kaiser beta=5.0
RESAMPLE_WINDOW = ("kaiser", 5.0)


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono PCM samples in [-1, 1] at a known rate."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    all_silent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError("Waveform samples must be 1-D (mono)")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def load_pcm(path) -> Waveform:
    """Load a RIFF/WAVE PCM file as a mono waveform.

    Integer samples are scaled by the type's full-scale value, multichannel
    audio is mixed down by channel averaging. Supports 8/16/24/32-bit integer
    PCM and 32/64-bit IEEE float, including the EXTENSIBLE wrapper.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise FormatError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE chunk")
                (sub_format,) = struct.unpack_from("<H", body, 24)
                fmt = (sub_format,) + fmt[1:]
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")
    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels < 1 or sample_rate <= 0:
        raise FormatError(f"{path}: invalid fmt chunk (channels={n_channels}, rate={sample_rate})")
    if len(data) == 0:
        raise EmptyInputError(f"{path}: empty audio payload")

    if audio_format == _WAVE_FORMAT_PCM:
        x = _decode_int_pcm(data, bits, path)
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT:
        if bits == 32:
            x = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(data[:len(data) - len(data) % 8], dtype="<f8").astype(np.float64)
        else:
            raise UnsupportedFormatError(f"{path}: {bits}-bit float WAV not supported")
        x = np.clip(x, -1.0, 1.0)
    else:
        raise UnsupportedFormatError(f"{path}: non-PCM codec 0x{audio_format:04x}")

    if len(x) == 0:
        raise EmptyInputError(f"{path}: empty audio payload")
    n_frames = len(x) // n_channels
    x = x[:n_frames * n_channels].reshape(n_frames, n_channels).mean(axis=1)
    return Waveform(samples=x, sample_rate=int(sample_rate), source_id=str(path))


def _decode_int_pcm(data: bytes, bits: int, path) -> np.ndarray:
    if bits == 8:
        # 8-bit WAV is unsigned
        return (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 16:
        usable = len(data) - len(data) % 2
        return np.frombuffer(data[:usable], dtype="<i2").astype(np.float64) / 32768.0
    if bits == 24:
        usable = len(data) - len(data) % 3
        b = np.frombuffer(data[:usable], dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val = np.where(val >= 1 << 23, val - (1 << 24), val)
        return val.astype(np.float64) / float(1 << 23)
    if bits == 32:
        usable = len(data) - len(data) % 4
        return np.frombuffer(data[:usable], dtype="<i4").astype(np.float64) / float(1 << 31)
    raise UnsupportedFormatError(f"{path}: {bits}-bit integer PCM not supported")


def save_wav(w: Waveform, path, bits: int = 16) -> None:
    """Write a mono 16-bit PCM WAV (used by the synthetic-corpus generator)."""
    if bits != 16:
        raise ValueError("only 16-bit output is supported")
    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    data = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate,
                                 w.sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    with open(path, "wb") as fh:
        fh.write(hdr + data)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited resampling (polyphase windowed-sinc, Kaiser beta 5.0)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    if len(w) == 0:
        return replace(w, sample_rate=int(target_rate))
    ratio = Fraction(int(target_rate), int(w.sample_rate))
    y = resample_poly(w.samples, ratio.numerator, ratio.denominator, window=RESAMPLE_WINDOW)
    return Waveform(samples=y, sample_rate=int(target_rate),
                    source_id=w.source_id, all_silent=w.all_silent)


def trim_silence(w: Waveform, threshold_db: float = 30.0) -> Waveform:
    """Strip leading and trailing low-energy frames.

    Frames (25 ms, 10 ms hop) whose RMS sits more than `threshold_db` below
    the clip's peak frame RMS are treated as silence; interior frames are
    never removed. An all-zero clip comes back empty with `all_silent` set.
    """
    if threshold_db <= 0:
        raise ValueError(f"threshold_db must be positive, got {threshold_db}")
    if len(w) == 0:
        return replace(w, all_silent=True)
    frame_len = max(1, int(round(TRIM_FRAME_S * w.sample_rate)))
    hop = max(1, int(round(TRIM_HOP_S * w.sample_rate)))
    starts = list(range(0, len(w), hop))
    rms = np.array([
        np.sqrt(np.mean(w.samples[s:s + frame_len] ** 2)) for s in starts
    ])
    peak = rms.max()
    if peak == 0.0:
        return Waveform(samples=np.zeros(0), sample_rate=w.sample_rate,
                        source_id=w.source_id, all_silent=True)
    keep = rms >= peak * 10.0 ** (-threshold_db / 20.0)
    first = int(np.argmax(keep))
    last = int(len(keep) - 1 - np.argmax(keep[::-1]))
    lo = starts[first]
    hi = min(starts[last] + frame_len, len(w))
    return Waveform(samples=w.samples[lo:hi], sample_rate=w.sample_rate,
                    source_id=w.source_id)


def fix_duration(w: Waveform, duration_s: float) -> Waveform:
    """Truncate from the end or zero-pad at the end to an exact duration."""
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    target = int(round(duration_s * w.sample_rate))
    if len(w) == target:
        return w
    if len(w) > target:
        y = w.samples[:target]
    else:
        y = np.concatenate([w.samples, np.zeros(target - len(w))])
    return Waveform(samples=y, sample_rate=w.sample_rate,
                    source_id=w.source_id, all_silent=w.all_silent)
