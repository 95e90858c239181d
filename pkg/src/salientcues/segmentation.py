"""Top-k salient segment selection over saliency maps, plus random baselines.

Scores are cumulative (signed) relevance over a fixed-duration sliding
window; selection is greedy in descending score with earliest-start
tie-breaking, skipping overlaps under the default policy.
"""

from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .saliency import SaliencyMap
from .spectrogram import SpectroConfig, frame_to_samples
from .textio import fmt_float

OVERLAP_POLICIES = ("non_overlapping", "free")


@dataclass(frozen=True)
class SegmentationConfig:
    segment_duration_s: float = 0.15
    k: int = 5
    slide_stride_frames: int = 1
    overlap_policy: str = "non_overlapping"

    def __post_init__(self):
        if self.segment_duration_s <= 0:
            raise ValueError("segment_duration_s must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.slide_stride_frames < 1:
            raise ValueError("slide_stride_frames must be >= 1")
        if self.overlap_policy not in OVERLAP_POLICIES:
            raise ValueError(f"overlap_policy must be one of {OVERLAP_POLICIES}")

    def window_frames(self, spectro: SpectroConfig) -> int:
        n = int(round(self.segment_duration_s * spectro.sample_rate / spectro.hop_length))
        if n < 1:
            raise ValueError(f"segment duration {self.segment_duration_s}s is shorter "
                             f"than one hop ({spectro.hop_length} samples)")
        return n


@dataclass(frozen=True)
class SalientSegment:
    frame_start: int
    frame_end_exclusive: int
    sample_start: int
    sample_end_exclusive: int
    cumulative_relevance: float
    rank: int

    def __post_init__(self):
        if not (0 <= self.frame_start < self.frame_end_exclusive):
            raise ValueError(f"bad frame span [{self.frame_start}, "
                             f"{self.frame_end_exclusive})")
        if not (0 <= self.sample_start <= self.sample_end_exclusive):
            raise ValueError(f"bad sample span [{self.sample_start}, "
                             f"{self.sample_end_exclusive})")
        if self.rank < 1:
            raise ValueError("rank is 1-based")

    def overlaps(self, other: "SalientSegment") -> bool:
        return (self.frame_start < other.frame_end_exclusive
                and other.frame_start < self.frame_end_exclusive)


@dataclass
class Selection:
    """A ranked segment list plus how the selection terminated."""
    segments: list
    short_selection: bool = False
    overlap_fallback: bool = False

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def __getitem__(self, i):
        return self.segments[i]


def window_scores(m: SaliencyMap, cfg: SegmentationConfig,
                  spectro: SpectroConfig) -> list:
    """Every (frame_start, cumulative_relevance) pair on the stride grid."""
    win = cfg.window_frames(spectro)
    h, w = m.data.shape
    if win > w:
        raise ValueError(f"segment window {win} frames exceeds map width {w}")
    return [(s, float(m.data[:, s:s + win].sum()))
            for s in range(0, w - win + 1, cfg.slide_stride_frames)]


def select_topk(scores, cfg: SegmentationConfig, spectro: SpectroConfig,
                n_frames: int | None = None,
                n_samples: int | None = None) -> Selection:
    """Greedy descending-score selection; ties go to the earlier start."""
    if not scores:
        raise ValueError("no window positions to select from")
    win = cfg.window_frames(spectro)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i][1], scores[i][0]))
    chosen = []
    for i in order:
        start, score = scores[i]
        if cfg.overlap_policy == "non_overlapping" and any(
                start < c[0] + win and c[0] < start + win for c in chosen):
            continue
        chosen.append((start, score))
        if len(chosen) == cfg.k:
            break
    segments = []
    for rank, (start, score) in enumerate(chosen, start=1):
        s0, s1 = frame_to_samples(start, start + win, spectro,
                                  n_frames=n_frames, n_samples=n_samples)
        segments.append(SalientSegment(
            frame_start=start, frame_end_exclusive=start + win,
            sample_start=s0, sample_end_exclusive=s1,
            cumulative_relevance=score, rank=rank))
    return Selection(segments=segments, short_selection=len(segments) < cfg.k)


def random_segments(utterance_frames: int, cfg: SegmentationConfig,
                    spectro: SpectroConfig, seed: int,
                    n_samples: int | None = None,
                    max_attempts: int = 1000) -> Selection:
    """k equal-length windows with uniformly random starts.

    Each window is drawn by rejection against the ones already placed; a
    window that cannot be placed disjointly within the attempt budget is
    allowed to overlap and the selection is flagged.
    """
    win = cfg.window_frames(spectro)
    if utterance_frames < win:
        raise ValueError(f"utterance has {utterance_frames} frames, "
                         f"needs at least {win}")
    rng = np.random.default_rng(seed)
    max_start = utterance_frames - win
    starts = []
    fallback = False
    for _ in range(cfg.k):
        for _ in range(max_attempts):
            s = int(rng.integers(0, max_start + 1))
            if all(not (s < t + win and t < s + win) for t in starts):
                starts.append(s)
                break
        else:
            fallback = True
            starts.append(int(rng.integers(0, max_start + 1)))
    segments = []
    for rank, start in enumerate(starts, start=1):
        s0, s1 = frame_to_samples(start, start + win, spectro,
                                  n_frames=utterance_frames, n_samples=n_samples)
        segments.append(SalientSegment(
            frame_start=start, frame_end_exclusive=start + win,
            sample_start=s0, sample_end_exclusive=s1,
            cumulative_relevance=0.0, rank=rank))
    return Selection(segments=segments, overlap_fallback=fallback)


def write_seg(selection, path) -> None:
    """SEG1: one `rank frame_start frame_end sample_start sample_end
    relevance` line per segment."""
    with open(path, "w", encoding="utf-8") as fh:
        for seg in selection:
            fh.write(" ".join([
                str(seg.rank), str(seg.frame_start), str(seg.frame_end_exclusive),
                str(seg.sample_start), str(seg.sample_end_exclusive),
                fmt_float(seg.cumulative_relevance)]) + "\n")


def read_seg(path) -> list:
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                segments.append(SalientSegment(
                    rank=int(parts[0]), frame_start=int(parts[1]),
                    frame_end_exclusive=int(parts[2]), sample_start=int(parts[3]),
                    sample_end_exclusive=int(parts[4]),
                    cumulative_relevance=float(parts[5])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return segments
