"""Occlusion-sensitivity saliency, salient-segment acoustic cues, and
explanation validation for speech emotion classifiers."""

__version__ = "0.1.0"

from .audio_io import Waveform, fix_duration, load_pcm, resample, save_wav, \
    trim_silence
from .cues import (CueConfig, CueVector, PitchTrack, compute_cue_vector,
                   extract_cues, f0_mean_semitones, hnr, jitter,
                   loudness_sones, shimmer, spectral_slope_500_1500,
                   track_pitch)
from .oracle import (EmotionLabelSet, EnergyOracle, ExternalOracle,
                     LinearOracle, ProbabilityVector, UniformOracle,
                     connect_external, make_oracle)
from .pipeline import PipelineSettings, run_pipeline
from .saliency import (OcclusionConfig, SaliencyMap, export_map, import_map,
                       occlusion_map)
from .segmentation import (SalientSegment, SegmentationConfig, Selection,
                           random_segments, select_topk, window_scores)
from .spectrogram import (LogMelSpectrogram, SpectroConfig, log_mel,
                          mel_filterbank, frame_to_samples)
from .synth import SynthDesign, synth_clip, synth_corpus
from .validation import (UtteranceRecord, ValidationRecord,
                         aggregate_emotion_stats, delta_f, delta_sign_test,
                         plausibility_report)
