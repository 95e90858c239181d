"""Deterministic synthetic corpus for desk-scale pipeline runs.

High-arousal clips carry a few loud amplitude-modulated bursts of a high
carrier at seeded positions over a quiet background; low-arousal clips are
steady quiet low-frequency tones. Both get a small white-noise floor. The
planted burst spans are emitted as ground-truth segment files so
localization can be scored.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import Waveform, save_wav
from .segmentation import SalientSegment, write_seg
from .validation import write_lab

UNKNOWN_PREDICTION = "-"


@dataclass(frozen=True)
class SynthDesign:
    duration_s: float = 2.0
    sample_rate: int = 16000
    high_carrier_hz: float = 330.0
    low_carrier_hz: float = 110.0
    burst_amplitude: float = 0.45
    background_amplitude: float = 0.02
    low_tone_amplitude: float = 0.02
    noise_amplitude: float = 0.003
    burst_noise_amplitude: float = 0.05
    burst_duration_s: float = 0.15
    bursts_per_clip: int = 3
    burst_margin_s: float = 0.1
    burst_gap_s: float = 0.2
    am_rate_hz: float = 30.0
    am_depth: float = 0.5
    ramp_s: float = 0.005

    def __post_init__(self):
        needed = (self.bursts_per_clip * (self.burst_duration_s + self.burst_gap_s)
                  + 2 * self.burst_margin_s)
        if needed > self.duration_s:
            raise ValueError(f"{self.bursts_per_clip} bursts with gaps need "
                             f"{needed:.2f}s, clip is {self.duration_s}s")


def _place_bursts(design: SynthDesign, rng) -> list:
    sr = design.sample_rate
    n = int(round(design.duration_s * sr))
    burst_len = int(round(design.burst_duration_s * sr))
    margin = int(round(design.burst_margin_s * sr))
    gap = int(round(design.burst_gap_s * sr))
    lo, hi = margin, n - burst_len - margin
    starts: list = []
    for _ in range(design.bursts_per_clip):
        for _ in range(10000):
            s = int(rng.integers(lo, hi + 1))
            if all(abs(s - t) >= burst_len + gap for t in starts):
                starts.append(s)
                break
        else:
            raise RuntimeError("could not place non-overlapping bursts; "
                               "design is too dense")
    return sorted(starts)


def _ramp_envelope(length: int, ramp: int) -> np.ndarray:
    env = np.ones(length)
    if ramp > 0:
        r = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        env[:ramp] = r
        env[length - ramp:] = r[::-1]
    return env


def synth_clip(design: SynthDesign, arousal: str, rng):
    """One clip plus its planted burst sample spans (empty for low)."""
    sr = design.sample_rate
    n = int(round(design.duration_s * sr))
    t = np.arange(n) / sr
    if arousal == "low":
        samples = design.low_tone_amplitude * np.sin(
            2.0 * np.pi * design.low_carrier_hz * t)
        samples = samples + design.noise_amplitude * rng.standard_normal(n)
        return samples, []
    if arousal != "high":
        raise ValueError("arousal must be 'high' or 'low'")
    burst_len = int(round(design.burst_duration_s * sr))
    starts = _place_bursts(design, rng)
    env = np.full(n, design.background_amplitude)
    noise_env = np.full(n, design.noise_amplitude)
    t_local = np.arange(burst_len) / sr
    am = 1.0 - 0.5 * design.am_depth * (
        1.0 - np.cos(2.0 * np.pi * design.am_rate_hz * t_local))
    shape = am * _ramp_envelope(burst_len, int(round(design.ramp_s * sr)))
    for s in starts:
        env[s:s + burst_len] = np.maximum(env[s:s + burst_len],
                                          design.burst_amplitude * shape)
        # A broadband component rides along so bursts lift every mel band,
        # not just the carrier's; energy-style oracles then see the bursts.
        noise_env[s:s + burst_len] = np.maximum(
            noise_env[s:s + burst_len], design.burst_noise_amplitude * shape)
    samples = env * np.sin(2.0 * np.pi * design.high_carrier_hz * t)
    samples = samples + noise_env * rng.standard_normal(n)
    return samples, [(s, s + burst_len) for s in starts]


def synth_corpus(out_dir, n_high: int = 20, n_low: int = 20, seed: int = 0,
                 design: SynthDesign | None = None, high_label: str = "angry",
                 low_label: str = "sad", hop_length: int = 240) -> list:
    """Write wavs, ground-truth SEG1 files, and a LAB1 file (predictions
    left as `-` for the pipeline to fill). Returns the source ids."""
    design = design or SynthDesign()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = ([(high_label, "high", i) for i in range(n_high)]
            + [(low_label, "low", i) for i in range(n_low)])
    entries = []
    source_ids = []
    for clip_index, (label, arousal, i) in enumerate(plan):
        rng = np.random.default_rng((seed, clip_index))
        samples, bursts = synth_clip(design, arousal, rng)
        source_id = f"{label}_{i:03d}"
        save_wav(Waveform(samples, design.sample_rate),
                 out_dir / f"{source_id}.wav")
        truth = []
        burst_frames = max(1, int(round(design.burst_duration_s
                                        * design.sample_rate / hop_length)))
        for rank, (s0, s1) in enumerate(bursts, start=1):
            f0 = int(round(s0 / hop_length))
            truth.append(SalientSegment(
                frame_start=f0, frame_end_exclusive=f0 + burst_frames,
                sample_start=s0, sample_end_exclusive=s1,
                cumulative_relevance=0.0, rank=rank))
        write_seg(truth, out_dir / f"{source_id}.truth.seg")
        entries.append((source_id, label, UNKNOWN_PREDICTION))
        source_ids.append(source_id)
    write_lab(entries, out_dir / "labels.lab")
    return source_ids
