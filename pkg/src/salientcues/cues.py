"""Six acoustic cues over waveform slices: loudness (sones), spectral slope
500-1500 Hz (dB/kHz), jitter (ratio), shimmer (dB), F0 mean (semitones re
27.5 Hz), and HNR (dB).

Pitch runs on normalized autocorrelation with parabolic lag refinement.
Jitter and shimmer are frame-level approximations of the cycle-to-cycle
definitions: consecutive voiced analysis frames stand in for glottal cycles.
Fully unvoiced slices report 0 for the voiced-dependent cues and flag it
through voiced_fraction.
"""

from dataclasses import dataclass
import math

import numpy as np

from .audio_io import Waveform
from .errors import FormatError, TooShortError
from .spectrogram import SpectroConfig, stft_power
from .textio import check_token, parse_floats

F0_REFERENCE_HZ = 27.5

# The six cue columns, in file order; voiced_fraction rides along in CUE1.
CUE_FIELDS = ("loudness_sones", "shrillness_slope", "jitter_ratio",
              "shimmer_db", "f0_mean_st", "hnr_db")
CUE_COLUMNS = CUE_FIELDS + ("voiced_fraction",)


@dataclass(frozen=True)
class CueConfig:
    pitch_frame_ms: float = 40.0
    pitch_hop_ms: float = 10.0
    f0_min_hz: float = 55.0
    f0_max_hz: float = 550.0
    voicing_threshold: float = 0.45
    silence_rms_floor: float = 1e-4
    amplitude_floor: float = 1e-6
    loudness_frame_ms: float = 25.0
    loudness_hop_ms: float = 10.0
    calibration_dbfs_to_spl: float = 90.0
    slope_lo_hz: float = 500.0
    slope_hi_hz: float = 1500.0
    slope_min_band_fraction: float = 1e-3

    def __post_init__(self):
        if not (0 < self.f0_min_hz < self.f0_max_hz):
            raise ValueError("need 0 < f0_min_hz < f0_max_hz")
        if not (0.0 < self.voicing_threshold < 1.0):
            raise ValueError("voicing_threshold must be in (0, 1)")
        if not (0 < self.slope_lo_hz < self.slope_hi_hz):
            raise ValueError("need 0 < slope_lo_hz < slope_hi_hz")


@dataclass(eq=False)
class PitchTrack:
    f0_hz: np.ndarray
    voicing_confidence: np.ndarray
    peak_amplitude: np.ndarray
    autocorr_peak: np.ndarray

    def __post_init__(self):
        lengths = {len(self.f0_hz), len(self.voicing_confidence),
                   len(self.peak_amplitude), len(self.autocorr_peak)}
        if len(lengths) != 1:
            raise ValueError("pitch track arrays must share one length")

    def __len__(self):
        return len(self.f0_hz)

    @property
    def voiced(self) -> np.ndarray:
        return self.f0_hz > 0


@dataclass(eq=False)
class CueVector:
    loudness_sones: float
    shrillness_slope: float
    jitter_ratio: float
    shimmer_db: float
    f0_mean_st: float
    hnr_db: float
    voiced_fraction: float
    n_frames: int

    def __post_init__(self):
        vals = [getattr(self, f) for f in CUE_COLUMNS]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"cue values must be finite: {vals}")
        if self.jitter_ratio < 0 or self.shimmer_db < 0:
            raise ValueError("jitter and shimmer are non-negative")
        if not (0.0 <= self.voiced_fraction <= 1.0):
            raise ValueError("voiced_fraction must be in [0, 1]")
        if self.voiced_fraction == 0.0:
            zeroed = (self.f0_mean_st, self.jitter_ratio, self.shimmer_db, self.hnr_db)
            if any(v != 0.0 for v in zeroed):
                raise ValueError("unvoiced slice must report 0 for "
                                 "f0/jitter/shimmer/hnr")

    def as_array(self, include_voiced: bool = False) -> np.ndarray:
        fields = CUE_COLUMNS if include_voiced else CUE_FIELDS
        return np.array([getattr(self, f) for f in fields], dtype=np.float64)


@dataclass
class AggregateCues:
    """Per-cue mean/SD across the segments of one utterance."""
    mean: CueVector
    sd: np.ndarray  # aligned with CUE_COLUMNS
    n_segments: int


def _frames(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = 1 + (len(samples) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def _parabolic_offset(y0: float, y1: float, y2: float) -> float:
    denom = y0 - 2.0 * y1 + y2
    if abs(denom) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (y0 - y2) / denom, -0.5, 0.5))


def track_pitch(w: Waveform, frame_ms: float = 40.0, hop_ms: float = 10.0,
                f0_min: float = 55.0, f0_max: float = 550.0,
                voicing_threshold: float = 0.45,
                silence_rms_floor: float = 1e-4) -> PitchTrack:
    """Normalized-autocorrelation pitch with parabolic lag interpolation.

    A frame is voiced iff its normalized peak reaches the threshold and its
    RMS clears the silence floor. To dodge octave errors the picked lag is
    the smallest local maximum within 85 percent of the global peak.
    """
    sr = w.sample_rate
    frame_len = int(round(frame_ms / 1000.0 * sr))
    hop = int(round(hop_ms / 1000.0 * sr))
    if len(w) < frame_len:
        raise TooShortError(f"need at least {frame_len} samples "
                            f"({frame_ms} ms at {sr} Hz), got {len(w)}")
    lag_min = max(1, math.ceil(sr / f0_max))
    lag_max = math.floor(sr / f0_min)
    if lag_max >= frame_len:
        raise ValueError(f"f0_min {f0_min} Hz needs lags up to {lag_max}, "
                         f"beyond the {frame_len}-sample frame")
    if lag_min >= lag_max:
        raise ValueError("f0 range is empty at this sample rate")

    frames = _frames(w.samples, frame_len, hop)
    n = frames.shape[0]
    f0 = np.zeros(n)
    conf = np.zeros(n)
    peak_amp = np.abs(frames).max(axis=1)
    r_peak = np.zeros(n)

    nfft = 1 << (2 * frame_len - 1).bit_length()
    lags = np.arange(lag_min, lag_max + 1)
    for i in range(n):
        x = frames[i]
        rms = math.sqrt(float(np.mean(x * x)))
        spec = np.fft.rfft(x, nfft)
        ac = np.fft.irfft(spec * np.conj(spec), nfft)[:frame_len]
        sq = np.concatenate(([0.0], np.cumsum(x * x)))
        e_head = sq[frame_len - lags]           # energy of x[0 : L-tau]
        e_tail = sq[frame_len] - sq[lags]       # energy of x[tau : L]
        denom = np.sqrt(np.maximum(e_head * e_tail, 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(denom > 0.0, ac[lags] / np.maximum(denom, 1e-300), 0.0)
        r = np.clip(r, -1.0, 1.0)

        best = int(np.argmax(r))
        r_max = float(r[best])
        r_peak[i] = r_max
        conf[i] = max(0.0, min(1.0, r_max))
        if r_max < voicing_threshold or rms <= silence_rms_floor:
            continue

        pick = best
        floor = 0.85 * r_max
        for j in range(len(r)):
            left = r[j - 1] if j > 0 else -np.inf
            right = r[j + 1] if j + 1 < len(r) else -np.inf
            if r[j] >= floor and r[j] >= left and r[j] >= right:
                pick = j
                break
        if 0 < pick < len(r) - 1:
            lag = lags[pick] + _parabolic_offset(r[pick - 1], r[pick], r[pick + 1])
        else:
            lag = float(lags[pick])
        lag = min(max(lag, float(lag_min)), float(lag_max))
        f0[i] = sr / lag
    return PitchTrack(f0_hz=f0, voicing_confidence=conf,
                      peak_amplitude=peak_amp, autocorr_peak=r_peak)


def _voiced_runs(voiced: np.ndarray):
    start = None
    for i, v in enumerate(voiced):
        if v and start is None:
            start = i
        elif not v and start is not None:
            yield start, i
            start = None
    if start is not None:
        yield start, len(voiced)


def f0_mean_semitones(pt: PitchTrack) -> float:
    voiced = pt.voiced
    if not voiced.any():
        return 0.0
    st = 12.0 * np.log2(pt.f0_hz[voiced] / F0_REFERENCE_HZ)
    return float(st.mean())


def jitter(pt: PitchTrack) -> float:
    """Mean adjacent-frame period difference over the mean voiced period."""
    diffs = []
    periods = 1.0 / pt.f0_hz[pt.voiced] if pt.voiced.any() else np.array([])
    for a, b in _voiced_runs(pt.voiced):
        t = 1.0 / pt.f0_hz[a:b]
        diffs.extend(np.abs(np.diff(t)))
    if not diffs:
        return 0.0
    return float(np.mean(diffs) / np.mean(periods))


def shimmer(pt: PitchTrack, amplitude_floor: float = 1e-6) -> float:
    ratios = []
    for a, b in _voiced_runs(pt.voiced):
        amps = pt.peak_amplitude[a:b]
        for x, y in zip(amps[:-1], amps[1:]):
            if x >= amplitude_floor and y >= amplitude_floor:
                ratios.append(abs(20.0 * math.log10(y / x)))
    if len(ratios) < 2:
        return 0.0
    return float(np.mean(ratios))


def hnr(pt: PitchTrack) -> float:
    voiced = pt.voiced
    if not voiced.any():
        return 0.0
    vals = []
    for r in pt.autocorr_peak[voiced]:
        if r >= 1.0:
            vals.append(40.0)
        elif r <= 0.0:
            vals.append(-20.0)
        else:
            vals.append(min(40.0, max(-20.0, 10.0 * math.log10(r / (1.0 - r)))))
    return float(np.mean(vals))


def loudness_sones(w: Waveform, frame_ms: float = 25.0, hop_ms: float = 10.0,
                   calibration_dbfs_to_spl: float = 90.0,
                   silence_rms_floor: float = 1e-4) -> float:
    """Mean frame loudness under Stevens' power law.

    Frame level L = 20 log10(rms) + calibration, so a full-scale sine sits
    near 87 dB. Above 40 dB a 10 dB step doubles the sones; below, the
    low-level branch (L/40)^2.642 tapers to 0.
    """
    if len(w) == 0:
        raise ValueError("cannot compute loudness of an empty slice")
    sr = w.sample_rate
    frame_len = int(round(frame_ms / 1000.0 * sr))
    hop = int(round(hop_ms / 1000.0 * sr))
    if len(w) < frame_len:
        frames = w.samples[None, :]
    else:
        frames = _frames(w.samples, frame_len, hop)
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    keep = rms > silence_rms_floor
    if not keep.any():
        return 0.0
    levels = 20.0 * np.log10(rms[keep]) + calibration_dbfs_to_spl
    sones = np.where(levels > 40.0, np.exp2((levels - 40.0) / 10.0),
                     np.power(np.maximum(levels, 0.0) / 40.0, 2.642))
    return float(sones.mean())


def spectral_slope_500_1500(w: Waveform, cfg: CueConfig | None = None,
                            spectro: SpectroConfig | None = None) -> float:
    """Least-squares dB-per-kHz slope over the 500-1500 Hz band.

    Runs on a linear-frequency 1024-point FFT so the band edges land on
    exact bins. Frames whose in-band energy is below the silence-floor-in-
    band rule (absolute floor, or under slope_min_band_fraction of total
    power) are excluded; with no usable frame the cue is 0.
    """
    cfg = cfg or CueConfig()
    spectro = spectro or SpectroConfig(sample_rate=w.sample_rate)
    power = stft_power(w, spectro)  # (n_fft//2 + 1, frames)
    freqs = np.fft.rfftfreq(spectro.n_fft, d=1.0 / spectro.sample_rate)
    lo = int(np.searchsorted(freqs, cfg.slope_lo_hz, side="left"))
    hi = int(np.searchsorted(freqs, cfg.slope_hi_hz, side="right")) - 1
    if hi - lo < 1:
        raise ValueError("fewer than two FFT bins in the slope band")
    band = power[lo:hi + 1, :]
    band_sum = band.sum(axis=0)
    total = power.sum(axis=0)
    keep = (band_sum > 1e-10) & (band_sum >= cfg.slope_min_band_fraction
                                 * np.maximum(total, 1e-300))
    if not keep.any():
        return 0.0
    x = freqs[lo:hi + 1] / 1000.0
    xc = x - x.mean()
    y = 10.0 * np.log10(np.maximum(band[:, keep], 1e-30))
    slopes = xc @ (y - y.mean(axis=0)) / float(xc @ xc)
    return float(slopes.mean())


def high_band_energy_ratio(w: Waveform, cfg: CueConfig | None = None,
                           spectro: SpectroConfig | None = None) -> float:
    """Alternative shrillness measure: 10 log10 of the power fraction above
    the band's lower edge, meaned over frames above the silence floor."""
    cfg = cfg or CueConfig()
    spectro = spectro or SpectroConfig(sample_rate=w.sample_rate)
    power = stft_power(w, spectro)
    freqs = np.fft.rfftfreq(spectro.n_fft, d=1.0 / spectro.sample_rate)
    hi_mask = freqs >= cfg.slope_lo_hz
    total = power.sum(axis=0)
    keep = total > cfg.silence_rms_floor ** 2
    if not keep.any():
        return 0.0
    frac = power[hi_mask][:, keep].sum(axis=0) / np.maximum(total[keep], 1e-300)
    return float(np.mean(10.0 * np.log10(np.maximum(frac, 1e-30))))


def compute_cue_vector(w: Waveform, cfg: CueConfig | None = None,
                       shrillness: str = "slope") -> CueVector:
    cfg = cfg or CueConfig()
    pt = track_pitch(w, frame_ms=cfg.pitch_frame_ms, hop_ms=cfg.pitch_hop_ms,
                     f0_min=cfg.f0_min_hz, f0_max=cfg.f0_max_hz,
                     voicing_threshold=cfg.voicing_threshold,
                     silence_rms_floor=cfg.silence_rms_floor)
    if shrillness == "slope":
        shrill = spectral_slope_500_1500(w, cfg)
    elif shrillness == "band-ratio":
        shrill = high_band_energy_ratio(w, cfg)
    else:
        raise ValueError(f"shrillness must be 'slope' or 'band-ratio', "
                         f"got {shrillness!r}")
    return CueVector(
        loudness_sones=loudness_sones(
            w, frame_ms=cfg.loudness_frame_ms, hop_ms=cfg.loudness_hop_ms,
            calibration_dbfs_to_spl=cfg.calibration_dbfs_to_spl,
            silence_rms_floor=cfg.silence_rms_floor),
        shrillness_slope=shrill,
        jitter_ratio=jitter(pt),
        shimmer_db=shimmer(pt, amplitude_floor=cfg.amplitude_floor),
        f0_mean_st=f0_mean_semitones(pt),
        hnr_db=hnr(pt),
        voiced_fraction=float(pt.voiced.mean()),
        n_frames=len(pt))


def extract_cues(w: Waveform, segments=None, cfg: CueConfig | None = None,
                 shrillness: str = "slope"):
    """Cue vectors for each segment slice (or the whole clip when segments
    is None) plus their per-cue mean/SD aggregate."""
    cfg = cfg or CueConfig()
    if segments is None:
        slices = [w.samples]
    else:
        segments = list(segments)
        if not segments:
            raise ValueError("segment list is empty; pass None for whole-clip")
        slices = []
        for seg in segments:
            if seg.sample_end_exclusive > len(w):
                raise ValueError(f"segment [{seg.sample_start}, "
                                 f"{seg.sample_end_exclusive}) exceeds "
                                 f"waveform length {len(w)}")
            slices.append(w.samples[seg.sample_start:seg.sample_end_exclusive])
    vectors = [compute_cue_vector(Waveform(s, w.sample_rate), cfg, shrillness)
               for s in slices]
    table = np.stack([v.as_array(include_voiced=True) for v in vectors])
    means = table.mean(axis=0)
    mean_vec = CueVector(**dict(zip(CUE_COLUMNS, means)),
                         n_frames=int(sum(v.n_frames for v in vectors)))
    return vectors, AggregateCues(mean=mean_vec, sd=table.std(axis=0),
                                  n_segments=len(vectors))


AGG_RANK = "AGG"


def write_cue(source_id: str, vectors, aggregate: AggregateCues, path,
              ranks=None) -> None:
    """CUE1: `source_id rank loudness shrill jitter shimmer f0_st hnr
    voiced_frac` per segment, then one AGG row of means."""
    from .textio import fmt_row
    check_token(source_id, "source_id")
    ranks = list(ranks) if ranks is not None else list(range(1, len(vectors) + 1))
    if len(ranks) != len(vectors):
        raise ValueError("one rank per cue vector required")
    with open(path, "w", encoding="utf-8") as fh:
        for rank, vec in zip(ranks, vectors):
            fh.write(f"{source_id} {rank} "
                     + fmt_row(vec.as_array(include_voiced=True)) + "\n")
        fh.write(f"{source_id} {AGG_RANK} "
                 + fmt_row(aggregate.mean.as_array(include_voiced=True)) + "\n")


def read_cue(path):
    """Parse CUE1 into (source_id, [(rank, values[7])], agg_values[7])."""
    rows = []
    agg = None
    source_id = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split(None, 2)
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected "
                                  f"'source_id rank values...'")
            sid, rank, rest = parts
            if source_id is None:
                source_id = sid
            elif sid != source_id:
                raise FormatError(f"{path}:{lineno}: mixed source ids "
                                  f"{source_id!r} and {sid!r}")
            values = parse_floats(rest, len(CUE_COLUMNS), f"{path}:{lineno}")
            if rank == AGG_RANK:
                if agg is not None:
                    raise FormatError(f"{path}:{lineno}: duplicate AGG row")
                agg = values
            else:
                rows.append((int(rank), values))
    if source_id is None:
        raise FormatError(f"{path}: empty cue file")
    if agg is None:
        raise FormatError(f"{path}: missing AGG row")
    return source_id, rows, agg
