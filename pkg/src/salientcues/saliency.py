"""Occlusion-sensitivity saliency maps and the SGM1-S interchange format.

A map cell holds the coverage-normalized mean probability drop over every
masking window that covers it. Drops are signed: masking a region may raise
the target probability, which shows up as negative relevance.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from .errors import DataError, FormatError, GeometryMismatchError, ShapeError
from .spectrogram import LogMelSpectrogram
from .textio import check_token, fmt_row, parse_floats

log = logging.getLogger(__name__)

MASK_MODES = ("spectrogram_mean", "floor_value")
AXIS_MODES = ("time_only", "time_frequency")


@dataclass(frozen=True)
class OcclusionConfig:
    window_frames: int = 10
    stride_frames: int = 3
    mask_mode: str = "spectrogram_mean"
    axis_mode: str = "time_only"
    freq_window: int = 16
    freq_stride: int = 8

    def __post_init__(self):
        for name in ("window_frames", "stride_frames", "freq_window", "freq_stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mask_mode not in MASK_MODES and not self.mask_mode.startswith("fixed:"):
            raise ValueError(f"mask_mode must be one of {MASK_MODES} or fixed:<v>, "
                             f"got {self.mask_mode!r}")
        if self.mask_mode.startswith("fixed:"):
            float(self.mask_mode[len("fixed:"):])  # fail fast on a bad literal
        if self.axis_mode not in AXIS_MODES:
            raise ValueError(f"axis_mode must be one of {AXIS_MODES}, got {self.axis_mode!r}")

    def mask_value(self, data: np.ndarray, log_floor: float) -> float:
        if self.mask_mode == "spectrogram_mean":
            return float(data.mean())
        if self.mask_mode == "floor_value":
            return math.log(log_floor)
        return float(self.mask_mode[len("fixed:"):])


@dataclass(eq=False)
class SaliencyMap:
    data: np.ndarray
    method: str
    target_label: str
    source_id: str = ""
    spectro_config_digest: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ValueError(f"saliency map must be a non-empty 2-D matrix, "
                             f"got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("saliency map contains NaN/Inf")
        if self.method not in ("occlusion", "crp") and not self.method.startswith("imported:"):
            raise ValueError(f"method must be occlusion, crp, or imported:<name>, "
                             f"got {self.method!r}")

    @property
    def shape(self):
        return self.data.shape


def window_starts(total: int, window: int, stride: int) -> list:
    """Sliding starts at stride multiples, plus a tail window flush with the
    end when the stride grid leaves trailing positions uncovered."""
    if window > total:
        raise ValueError(f"window {window} exceeds extent {total}")
    starts = list(range(0, total - window + 1, stride))
    if starts[-1] != total - window:
        starts.append(total - window)
    return starts


def occlusion_map(spec: LogMelSpectrogram, oracle, target_label: str,
                  cfg: OcclusionConfig | None = None) -> SaliencyMap:
    cfg = cfg or OcclusionConfig()
    oracle.labels.index(target_label)
    h, w = spec.data.shape
    if cfg.window_frames > w:
        raise ValueError(f"occlusion window {cfg.window_frames} exceeds "
                         f"spectrogram width {w}")
    if cfg.axis_mode == "time_frequency" and cfg.freq_window > h:
        raise ValueError(f"frequency window {cfg.freq_window} exceeds "
                         f"spectrogram height {h}")
    fill = cfg.mask_value(spec.data, spec.config.log_floor)
    p0 = oracle.predict(spec)[target_label]

    t_starts = window_starts(w, cfg.window_frames, cfg.stride_frames)
    if cfg.axis_mode == "time_only":
        f_starts, f_win = [0], h
    else:
        f_starts, f_win = window_starts(h, cfg.freq_window, cfg.freq_stride), cfg.freq_window

    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for fs in f_starts:
        for ts in t_starts:
            masked = spec.data.copy()
            masked[fs:fs + f_win, ts:ts + cfg.window_frames] = fill
            drop = p0 - oracle.predict(masked)[target_label]
            acc[fs:fs + f_win, ts:ts + cfg.window_frames] += drop
            cnt[fs:fs + f_win, ts:ts + cfg.window_frames] += 1
    return SaliencyMap(data=acc / cnt, method="occlusion", target_label=target_label,
                       source_id=spec.source_id,
                       spectro_config_digest=spec.config.digest())


def export_map(m: SaliencyMap, path) -> None:
    """Write an SGM1-S file; round-trips bit-exactly through import_map."""
    if not m.target_label or not m.spectro_config_digest:
        raise ValueError("export needs a non-empty target_label and config digest")
    h, w = m.data.shape
    header = " ".join([str(h), str(w),
                       check_token(m.method, "method"),
                       check_token(m.target_label, "target_label"),
                       check_token(m.spectro_config_digest, "spectro_config_digest")])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in m.data:
            fh.write(fmt_row(row) + "\n")


def import_map(path, expected_dims=None, expected_digest=None,
               force: bool = False, source_id: str = "") -> SaliencyMap:
    """Read an SGM1-S file, validating dims and the spectrogram-config digest.

    A digest mismatch means the map was computed under different front-end
    geometry; it raises unless force=True, which downgrades it to a warning.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise FormatError(f"{path}: header must be 'H W method target digest', "
                              f"got {len(header)} fields")
        try:
            h, w = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer dims in header") from None
        if h < 1 or w < 1:
            raise FormatError(f"{path}: dims must be positive, got {h}x{w}")
        method, target_label, digest = header[2], header[3], header[4]
        if expected_dims is not None and (h, w) != tuple(expected_dims):
            raise ShapeError(f"{path}: map is {h}x{w}, expected "
                             f"{expected_dims[0]}x{expected_dims[1]}")
        if expected_digest is not None and digest != expected_digest:
            msg = (f"{path}: map was computed under spectrogram config {digest}, "
                   f"current config is {expected_digest}")
            if not force:
                raise GeometryMismatchError(msg)
            log.warning("%s (forced import)", msg)
        data = np.empty((h, w))
        for i in range(h):
            data[i] = parse_floats(fh.readline(), w, f"{path} row {i}")
        trailing = fh.read().strip()
        if trailing:
            raise FormatError(f"{path}: trailing content after {h} rows")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: map contains NaN/Inf")
    if method not in ("occlusion", "crp") and not method.startswith("imported:"):
        method = f"imported:{method}"
    return SaliencyMap(data=data, method=method, target_label=target_label,
                       source_id=source_id, spectro_config_digest=digest)
