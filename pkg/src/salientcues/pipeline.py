"""End-to-end driver: preprocess, spectrogram, saliency, segmentation, cue
extraction, validation, and aggregate tables, with per-utterance failure
isolation and manifest-based reproducibility.

All randomness flows from the single top-level seed: each utterance's
random-baseline seed is derived from it and the source id, so runs are
reproducible utterance by utterance regardless of processing order.
"""

import dataclasses
from dataclasses import dataclass, field, replace
import hashlib
import logging
from pathlib import Path

import numpy as np

from .audio_io import fix_duration, load_pcm, resample, trim_silence
from .cues import AggregateCues, CueConfig, CueVector, CUE_COLUMNS, extract_cues, \
    read_cue, write_cue
from .errors import FormatError
from .oracle import EmotionLabelSet, make_oracle
from .report import (CONFIG_SECTIONS, parse_manifest, render_delta_table,
                     render_sign_table, render_stats_table, write_manifest)
from .saliency import OcclusionConfig, export_map, import_map, occlusion_map
from .segmentation import SegmentationConfig, random_segments, select_topk, \
    window_scores, write_seg
from .spectrogram import SpectroConfig, log_mel, write_sgm
from .synth import UNKNOWN_PREDICTION
from .validation import (UtteranceRecord, aggregate_emotion_stats,
                         delta_sign_test, plausibility_report, read_lab,
                         validation_record, write_lab)

log = logging.getLogger(__name__)


@dataclass
class PipelineSettings:
    corpus: str
    labels: str
    oracle: str = "builtin:energy"
    seed: int = 0
    spectro: SpectroConfig = field(default_factory=SpectroConfig)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    segment: SegmentationConfig = field(default_factory=SegmentationConfig)
    cues: CueConfig = field(default_factory=CueConfig)
    shrillness: str = "slope"
    group_by: str = "true"
    arousal_overrides: str = ""
    target: str = "predicted"
    clip_duration_s: float = 2.0
    trim_db: float = 30.0

    def __post_init__(self):
        if self.shrillness not in ("slope", "band-ratio"):
            raise ValueError("shrillness must be slope or band-ratio")
        if self.group_by not in ("true", "predicted"):
            raise ValueError("group_by must be true or predicted")
        if self.target not in ("predicted", "true"):
            raise ValueError("target must be predicted or true")
        parse_arousal_overrides(self.arousal_overrides)


def parse_arousal_overrides(text: str) -> dict:
    """`label=high,label=low` pairs into a dict; empty text is fine."""
    overrides = {}
    if not text:
        return overrides
    for item in text.split(","):
        label, sep, tag = item.partition("=")
        if not sep or tag not in ("high", "low"):
            raise ValueError(f"arousal override must be label=high|low, "
                             f"got {item!r}")
        overrides[label] = tag
    return overrides


def _value_to_text(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _text_to_value(text: str, example):
    if example is None or (isinstance(example, float) and text == "none"):
        return None if text == "none" else float(text)
    if isinstance(example, bool):
        return text == "true"
    if isinstance(example, int):
        return int(text)
    if isinstance(example, float):
        return float(text)
    return text


def settings_to_mapping(s: PipelineSettings) -> dict:
    mapping = {
        "corpus": s.corpus, "labels": s.labels, "oracle": s.oracle,
        "seed": str(s.seed), "shrillness": s.shrillness,
        "group_by": s.group_by, "arousal_overrides": s.arousal_overrides,
        "target": s.target, "clip_duration_s": repr(s.clip_duration_s),
        "trim_db": repr(s.trim_db),
    }
    for prefix in CONFIG_SECTIONS:
        cfg = getattr(s, prefix if prefix != "segment" else "segment")
        for f in dataclasses.fields(cfg):
            mapping[f"{prefix}.{f.name}"] = _value_to_text(getattr(cfg, f.name))
    return mapping


def settings_from_mapping(mapping: dict) -> PipelineSettings:
    defaults = PipelineSettings(corpus="", labels="")
    kwargs = {}
    for prefix, cls in CONFIG_SECTIONS.items():
        cfg_kwargs = {}
        base = getattr(defaults, prefix)
        for f in dataclasses.fields(cls):
            key = f"{prefix}.{f.name}"
            if key in mapping:
                cfg_kwargs[f.name] = _text_to_value(mapping[key],
                                                    getattr(base, f.name))
        kwargs[prefix] = replace(base, **cfg_kwargs)
    for name in ("corpus", "labels", "oracle", "shrillness", "group_by",
                 "arousal_overrides", "target"):
        if name in mapping:
            kwargs[name] = mapping[name]
    if "seed" in mapping:
        kwargs["seed"] = int(mapping["seed"])
    for name in ("clip_duration_s", "trim_db"):
        if name in mapping:
            kwargs[name] = float(mapping[name])
    return PipelineSettings(**kwargs)


def settings_from_manifest(path) -> PipelineSettings:
    return settings_from_mapping(parse_manifest(path))


def utterance_seed(top_seed: int, source_id: str) -> int:
    """Stable per-utterance seed for the random baseline."""
    digest = hashlib.sha256(f"{top_seed}:{source_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class RunResult:
    out_dir: Path
    processed: list
    failed: dict
    records: list
    manifest_path: Path


def _preprocess(path, settings: PipelineSettings):
    w = load_pcm(path)
    w = trim_silence(w, threshold_db=settings.trim_db)
    w = resample(w, settings.spectro.sample_rate)
    return fix_duration(w, settings.clip_duration_s)


def _agg_from_cue_file(path):
    _, rows, agg = read_cue(path)
    mean = CueVector(**dict(zip(CUE_COLUMNS, agg)), n_frames=0)
    return AggregateCues(mean=mean, sd=np.zeros(len(CUE_COLUMNS)),
                         n_segments=max(1, len(rows)))


def _process_utterance(source_id, true_label, predicted, wav_path, utt_dir,
                       settings, oracle, saliency_dir, run_digest,
                       resume: bool):
    """All per-utterance artifacts; returns the resolved UtteranceRecord."""
    utt_dir.mkdir(parents=True, exist_ok=True)
    done_path = utt_dir / "done"
    if (resume and done_path.exists()
            and done_path.read_text().strip() == run_digest):
        sal_file = sorted(utt_dir.glob("sal.*.sgms"))[0]
        with open(sal_file, "r", encoding="utf-8") as fh:
            method = fh.readline().split()[2]
        record = UtteranceRecord(
            source_id=source_id, true_label=true_label,
            predicted_label=(utt_dir / "predicted").read_text().strip(),
            salient_cues=_agg_from_cue_file(utt_dir / "cues.salient.cue"),
            fullclip_cues=_agg_from_cue_file(utt_dir / "cues.full.cue").mean,
            random_cues=_agg_from_cue_file(utt_dir / "cues.random.cue"),
            seed=utterance_seed(settings.seed, source_id), method=method)
        return record, True

    w = _preprocess(wav_path, settings)
    spec = log_mel(w, settings.spectro)
    spec.source_id = source_id
    write_sgm(spec, utt_dir / "spec.sgm")

    if saliency_dir is not None:
        sal = import_map(Path(saliency_dir) / f"{source_id}.sgms",
                         expected_dims=spec.data.shape,
                         expected_digest=settings.spectro.digest(),
                         source_id=source_id)
        if predicted == UNKNOWN_PREDICTION:
            raise ValueError("imported-saliency mode needs predicted labels "
                             "in the label file")
        target = sal.target_label
    else:
        probs = oracle.predict(spec)
        if predicted == UNKNOWN_PREDICTION:
            predicted = probs.argmax_label()
        target = predicted if settings.target == "predicted" else true_label
        sal = occlusion_map(spec, oracle, target, settings.occlusion)
    method = sal.method.replace(":", "_")
    export_map(sal, utt_dir / f"sal.{method}.sgms")
    (utt_dir / "predicted").write_text(predicted + "\n")

    selection = select_topk(
        window_scores(sal, settings.segment, settings.spectro),
        settings.segment, settings.spectro,
        n_frames=spec.n_frames, n_samples=len(w))
    write_seg(selection, utt_dir / "segs.seg")
    seed = utterance_seed(settings.seed, source_id)
    rand_cfg = replace(settings.segment, k=max(1, len(selection)))
    rand_sel = random_segments(spec.n_frames, rand_cfg, settings.spectro,
                               seed, n_samples=len(w))
    write_seg(rand_sel, utt_dir / "segs.random.seg")

    sal_vecs, sal_agg = extract_cues(w, selection.segments, settings.cues,
                                     settings.shrillness)
    write_cue(source_id, sal_vecs, sal_agg, utt_dir / "cues.salient.cue",
              ranks=[seg.rank for seg in selection])
    full_vecs, full_agg = extract_cues(w, None, settings.cues,
                                       settings.shrillness)
    write_cue(source_id, full_vecs, full_agg, utt_dir / "cues.full.cue")
    rand_vecs, rand_agg = extract_cues(w, rand_sel.segments, settings.cues,
                                       settings.shrillness)
    write_cue(source_id, rand_vecs, rand_agg, utt_dir / "cues.random.cue",
              ranks=[seg.rank for seg in rand_sel])

    done_path.write_text(run_digest + "\n")
    record = UtteranceRecord(
        source_id=source_id, true_label=true_label, predicted_label=predicted,
        salient_cues=sal_agg, fullclip_cues=full_vecs[0], random_cues=rand_agg,
        seed=seed, method=sal.method)
    return record, False


def _arousal_map(labels_seen, overrides_text: str, oracle) -> dict:
    overrides = parse_arousal_overrides(overrides_text)
    if oracle is not None:
        mapping = dict(oracle.labels.arousal)
        mapping.update(overrides)
        extra = [l for l in labels_seen if l not in mapping]
    else:
        mapping = {}
        extra = list(labels_seen)
    if extra:
        mapping.update(EmotionLabelSet.from_labels(
            sorted(set(extra)), overrides=overrides).arousal)
    return mapping


def _write_aggregates(agg_dir, records, arousal_map, settings):
    labels_out = [(r.source_id, r.true_label, r.predicted_label)
                  for r in records]
    write_lab(labels_out, agg_dir / "labels.lab")

    methods = sorted({r.method for r in records})
    for name, split_kwargs in (("correct", {}),
                               ("incorrect", {"group_by": settings.group_by})):
        by_method = {}
        for method in methods:
            subset = [r for r in records if r.method == method]
            stats = aggregate_emotion_stats(subset, split=name,
                                            **split_kwargs)
            if stats:
                by_method[method] = stats
        if not by_method:
            continue
        for fmt, ext in (("markdown", "md"), ("csv", "csv")):
            (agg_dir / f"stats_{name}.{ext}").write_text(
                render_stats_table(by_method, arousal_map, fmt=fmt))

    complete = [r for r in records if not r.partial]
    for baseline, tag in (("full_clip", "fullclip"),
                          ("random_regions", "random")):
        vrecs = [validation_record(r, baseline, arousal_map) for r in complete]
        if not vrecs:
            continue
        for fmt, ext in (("markdown", "md"), ("csv", "csv")):
            (agg_dir / f"delta_{tag}.{ext}").write_text(
                render_delta_table(vrecs, fmt=fmt))
        signs = delta_sign_test(complete, baseline, arousal_map)
        (agg_dir / f"signs_{tag}.md").write_text(render_sign_table(signs))

    plaus = plausibility_report(records, arousal_map,
                                group_by=settings.group_by)
    lines = ["# plausibility check"]
    if plaus.note:
        lines.append(plaus.note)
    for flag in plaus.flags:
        lines.append(
            f"CONTRADICTION {flag.cue}: correct {flag.high_emotion} "
            f"{flag.correct_high:.4g} vs {flag.low_emotion} "
            f"{flag.correct_low:.4g}; incorrect {flag.incorrect_high:.4g} "
            f"vs {flag.incorrect_low:.4g}")
    if not plaus.flags and not plaus.note:
        lines.append("no contradictions flagged")
    (agg_dir / "plausibility.md").write_text("\n".join(lines) + "\n")


def run_pipeline(settings: PipelineSettings, out_dir, saliency_dir=None,
                 oracle=None, resume: bool = True, jobs: int = 1) -> RunResult:
    """Process every labeled utterance, isolating per-utterance failures.

    With saliency_dir set, maps are imported instead of computed and the
    oracle is never contacted. Passing an oracle object overrides the
    settings' oracle string (used for in-process testing). jobs > 1 runs
    utterances on a thread pool; an exec/tcp oracle allows one in-flight
    request per connection, so external oracles stay sequential.
    """
    out_dir = Path(out_dir)
    agg_dir = out_dir / "aggregate"
    agg_dir.mkdir(parents=True, exist_ok=True)
    mapping = settings_to_mapping(settings)
    manifest_path = agg_dir / "manifest.txt"
    write_manifest(mapping, manifest_path)
    run_digest = hashlib.sha256(manifest_path.read_bytes()).hexdigest()[:12]

    entries = read_lab(settings.labels)
    corpus = Path(settings.corpus)

    own_oracle = False
    if saliency_dir is None and oracle is None:
        oracle = make_oracle(settings.oracle)
        own_oracle = True
    if jobs > 1 and settings.oracle.startswith(("exec:", "tcp:")) \
            and saliency_dir is None:
        log.warning("external oracle connections are sequential; "
                    "running with jobs=1")
        jobs = 1

    def worker(entry):
        source_id, true_label, predicted = entry
        try:
            record, resumed = _process_utterance(
                source_id, true_label, predicted,
                corpus / f"{source_id}.wav", out_dir / source_id,
                settings, oracle, saliency_dir, run_digest, resume)
            if resumed:
                log.info("%s: outputs match manifest, skipped", source_id)
            return source_id, record, None
        except Exception as exc:
            return source_id, None, f"{type(exc).__name__}: {exc}"

    try:
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(worker, entries))
        else:
            results = [worker(e) for e in entries]
        records = []
        failed = {}
        for source_id, record, error in results:
            if error is None:
                records.append(record)
            else:
                failed[source_id] = error
                log.warning("%s failed: %s", source_id, error)
        (agg_dir / "errors.txt").write_text(
            "".join(f"{sid} {msg}\n" for sid, msg in sorted(failed.items())))
        if records:
            arousal_map = _arousal_map({r.true_label for r in records}
                                       | {r.predicted_label for r in records},
                                       settings.arousal_overrides,
                                       oracle)
            _write_aggregates(agg_dir, records, arousal_map, settings)
    finally:
        if own_oracle:
            oracle.close()
    return RunResult(out_dir=out_dir, processed=[r.source_id for r in records],
                     failed=failed, records=records,
                     manifest_path=manifest_path)
