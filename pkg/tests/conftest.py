"""Shared fixtures and signal builders for the test suite."""

import numpy as np
import pytest

from salientcues.audio_io import Waveform


def make_tone(freq_hz: float, duration_s: float = 2.0, sample_rate: int = 16000,
              amplitude: float = 0.3, phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return Waveform(samples=amplitude * np.sin(2 * np.pi * freq_hz * t + phase),
                    sample_rate=sample_rate, source_id=f"tone{freq_hz:g}")


def make_noise(duration_s: float = 2.0, sample_rate: int = 16000,
               amplitude: float = 0.3, seed: int = 0) -> Waveform:
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    return Waveform(samples=amplitude * rng.standard_normal(n),
                    sample_rate=sample_rate, source_id=f"noise{seed}")


@pytest.fixture
def tone220() -> Waveform:
    return make_tone(220.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
