"""Two-level explanation validation: per-cue deltas between salient regions
and a baseline (full clip or random regions), per-emotion statistics split
by prediction correctness, and arousal sign expectations.

Sign convention: for every cue except the shrillness slope, high-arousal
emotions are expected to raise the cue in salient regions (positive delta)
and low-arousal emotions to lower it. The slope is inverted because a more
negative slope means stronger perceived shrillness.
"""

from dataclasses import dataclass
import logging

import numpy as np

from .cues import AggregateCues, CueVector, CUE_COLUMNS, CUE_FIELDS
from .errors import FormatError
from .textio import check_token

log = logging.getLogger(__name__)

BASELINES = ("full_clip", "random_regions")
SHRILLNESS_INDEX = CUE_FIELDS.index("shrillness_slope")


@dataclass
class UtteranceRecord:
    source_id: str
    true_label: str
    predicted_label: str
    salient_cues: AggregateCues | None = None
    fullclip_cues: CueVector | None = None
    random_cues: AggregateCues | None = None
    seed: int | None = None
    method: str = "occlusion"

    @property
    def correct(self) -> bool:
        return self.true_label == self.predicted_label

    @property
    def partial(self) -> bool:
        return None in (self.salient_cues, self.fullclip_cues, self.random_cues)


@dataclass
class ValidationRecord:
    source_id: str
    baseline: str
    delta: np.ndarray  # aligned with CUE_FIELDS
    emotion: str
    arousal: str

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        if self.arousal not in ("high", "low"):
            raise ValueError("arousal must be 'high' or 'low'")


def _six(cues) -> np.ndarray:
    if isinstance(cues, AggregateCues):
        return cues.mean.as_array()
    if isinstance(cues, CueVector):
        return cues.as_array()
    arr = np.asarray(cues, dtype=np.float64)
    if arr.shape != (len(CUE_FIELDS),):
        raise ValueError(f"expected {len(CUE_FIELDS)} cue values, "
                         f"got shape {arr.shape}")
    return arr


def delta_f(salient, baseline) -> np.ndarray:
    """Componentwise salient minus baseline over the six cues."""
    return _six(salient) - _six(baseline)


def validation_record(rec: UtteranceRecord, baseline: str,
                      arousal_map: dict) -> ValidationRecord:
    if baseline == "full_clip":
        base = rec.fullclip_cues
    elif baseline == "random_regions":
        base = rec.random_cues
    else:
        raise ValueError(f"baseline must be one of {BASELINES}")
    if rec.salient_cues is None or base is None:
        raise ValueError(f"{rec.source_id}: record is partial, "
                         f"cannot compute deltas")
    return ValidationRecord(
        source_id=rec.source_id, baseline=baseline,
        delta=delta_f(rec.salient_cues, base),
        emotion=rec.true_label, arousal=arousal_map[rec.true_label])


@dataclass
class EmotionStats:
    emotion: str
    mean: np.ndarray  # aligned with CUE_COLUMNS
    sd: np.ndarray    # population SD
    count: int


def aggregate_emotion_stats(records, split: str = "all",
                            group_by: str = "true") -> dict:
    """Per-emotion mean and population SD of the salient-cue aggregates.

    split selects correct, incorrect, or all predictions; incorrect records
    group by true label unless group_by='predicted'. Emotions emptied by
    the split are omitted with a warning.
    """
    if split not in ("correct", "incorrect", "all"):
        raise ValueError("split must be correct, incorrect, or all")
    if group_by not in ("true", "predicted"):
        raise ValueError("group_by must be true or predicted")
    all_emotions = {r.true_label for r in records}
    groups: dict = {}
    for rec in records:
        if rec.salient_cues is None:
            continue
        if split == "correct" and not rec.correct:
            continue
        if split == "incorrect" and rec.correct:
            continue
        key = rec.predicted_label if (group_by == "predicted"
                                      and split != "correct") else rec.true_label
        groups.setdefault(key, []).append(
            rec.salient_cues.mean.as_array(include_voiced=True))
    if groups:
        for emotion in sorted(all_emotions - set(groups)):
            log.warning("emotion %r has no records in split %r; omitted",
                        emotion, split)
    stats = {}
    for emotion in sorted(groups):
        table = np.stack(groups[emotion])
        stats[emotion] = EmotionStats(emotion=emotion, mean=table.mean(axis=0),
                                      sd=table.std(axis=0), count=len(table))
    return stats


def expected_signs(arousal: str) -> np.ndarray:
    """+1/-1 per cue for the given arousal class (slope inverted)."""
    sign = 1.0 if arousal == "high" else -1.0
    signs = np.full(len(CUE_FIELDS), sign)
    signs[SHRILLNESS_INDEX] = -sign
    return signs


@dataclass
class SignTestResult:
    emotion: str
    arousal: str
    fractions: np.ndarray  # aligned with CUE_FIELDS
    count: int


def delta_sign_test(records, baseline: str, arousal_map: dict) -> dict:
    """Per emotion, the fraction of utterances whose delta carries the
    expected sign, cue by cue. Zero deltas count as mismatches."""
    by_emotion: dict = {}
    for rec in records:
        if rec.partial:
            continue
        vrec = validation_record(rec, baseline, arousal_map)
        by_emotion.setdefault(vrec.emotion, []).append(vrec)
    out = {}
    for emotion in sorted(by_emotion):
        vrecs = by_emotion[emotion]
        signs = expected_signs(vrecs[0].arousal)
        deltas = np.stack([v.delta for v in vrecs])
        matches = (deltas * signs) > 0.0
        out[emotion] = SignTestResult(
            emotion=emotion, arousal=vrecs[0].arousal,
            fractions=matches.mean(axis=0), count=len(vrecs))
    return out


@dataclass
class ContradictionFlag:
    cue: str
    high_emotion: str
    low_emotion: str
    correct_high: float
    correct_low: float
    incorrect_high: float
    incorrect_low: float


@dataclass
class PlausibilityReport:
    stats_correct: dict
    stats_incorrect: dict
    flags: list
    note: str = ""


def plausibility_report(records, arousal_map: dict, rel_tol: float = 0.05,
                        group_by: str = "true") -> PlausibilityReport:
    """Flag cue orderings that hold for correct predictions but collapse or
    invert for incorrect ones.

    For each (high-arousal, low-arousal) emotion pair and each cue, the pair
    is a CONTRADICTION when the correct split satisfies the expected strict
    ordering while the incorrect split violates it or lands within rel_tol
    relative margin of equality.
    """
    stats_c = aggregate_emotion_stats(records, split="correct")
    stats_i = aggregate_emotion_stats(records, split="incorrect",
                                      group_by=group_by)
    if not stats_i:
        return PlausibilityReport(stats_correct=stats_c, stats_incorrect={},
                                  flags=[], note="no misclassifications")
    flags = []
    highs = [e for e in stats_c if arousal_map.get(e) == "high"]
    lows = [e for e in stats_c if arousal_map.get(e) == "low"]
    for hi_e in highs:
        for lo_e in lows:
            if hi_e not in stats_i or lo_e not in stats_i:
                continue
            for ci, cue in enumerate(CUE_FIELDS):
                invert = ci == SHRILLNESS_INDEX
                ch, cl = stats_c[hi_e].mean[ci], stats_c[lo_e].mean[ci]
                ih, il = stats_i[hi_e].mean[ci], stats_i[lo_e].mean[ci]
                if invert:
                    ch, cl, ih, il = -ch, -cl, -ih, -il
                correct_ok = ch > cl
                margin = rel_tol * max(abs(ih), abs(il))
                incorrect_violates = (ih - il) <= margin
                if correct_ok and incorrect_violates:
                    flags.append(ContradictionFlag(
                        cue=cue, high_emotion=hi_e, low_emotion=lo_e,
                        correct_high=stats_c[hi_e].mean[ci],
                        correct_low=stats_c[lo_e].mean[ci],
                        incorrect_high=stats_i[hi_e].mean[ci],
                        incorrect_low=stats_i[lo_e].mean[ci]))
    return PlausibilityReport(stats_correct=stats_c, stats_incorrect=stats_i,
                              flags=flags)


def write_lab(entries, path) -> None:
    """LAB1: one `source_id true_label predicted_label` line per utterance."""
    with open(path, "w", encoding="utf-8") as fh:
        for source_id, true_label, predicted_label in entries:
            fh.write(" ".join([check_token(source_id, "source_id"),
                               check_token(true_label, "true_label"),
                               check_token(predicted_label, "predicted_label")])
                     + "\n")


def read_lab(path) -> list:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected "
                                  f"'source_id true predicted'")
            if parts[0] in seen:
                raise FormatError(f"{path}:{lineno}: duplicate source_id "
                                  f"{parts[0]!r}")
            seen.add(parts[0])
            entries.append(tuple(parts))
    return entries
