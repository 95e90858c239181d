"""Command-line driver.

Subcommands mirror the pipeline stages (spectrogram, saliency, segment,
cues, validate, report) plus `run` for the whole chain and `synth` for the
deterministic test corpus.
"""

import argparse
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import pipeline as pl
from .audio_io import load_pcm, resample
from .cues import CueConfig, CUE_COLUMNS, extract_cues
from .errors import SalientCuesError
from .oracle import EmotionLabelSet, make_oracle
from .report import (apply_env_overrides, manifest_known_keys, parse_flat_config,
                     parse_manifest, render_delta_table, render_sign_table,
                     render_stats_table)
from .saliency import OcclusionConfig, export_map, import_map, occlusion_map
from .segmentation import (SegmentationConfig, random_segments, read_seg,
                           select_topk, window_scores, write_seg)
from .spectrogram import LogMelSpectrogram, SpectroConfig, log_mel, read_sgm, \
    write_sgm
from .synth import SynthDesign, synth_corpus
from .validation import (EmotionStats, delta_sign_test, plausibility_report,
                         read_lab, validation_record)

log = logging.getLogger(__name__)

MASK_ALIASES = {"mean": "spectrogram_mean", "floor": "floor_value"}


def _mask_mode(text: str) -> str:
    if text in MASK_ALIASES:
        return MASK_ALIASES[text]
    if text.startswith("fixed:"):
        return text
    raise argparse.ArgumentTypeError(
        f"mask must be mean, floor, or fixed:<v>, got {text!r}")


def _spectro_from_args(args) -> SpectroConfig:
    return SpectroConfig(n_fft=args.n_fft, win_length=args.win_length,
                         hop_length=args.hop_length, n_mels=args.n_mels,
                         sample_rate=args.sample_rate)


def _add_spectro_args(parser):
    parser.add_argument("--n-fft", type=int, default=1024)
    parser.add_argument("--win-length", type=int, default=480)
    parser.add_argument("--hop-length", type=int, default=240)
    parser.add_argument("--n-mels", type=int, default=128)
    parser.add_argument("--sample-rate", type=int, default=16000)


def _load_spec(path: str, cfg: SpectroConfig) -> LogMelSpectrogram:
    if str(path).endswith(".sgm"):
        data, source_id = read_sgm(path)
        return LogMelSpectrogram(data=data, config=cfg, source_id=source_id)
    w = resample(load_pcm(path), cfg.sample_rate)
    spec = log_mel(w, cfg)
    spec.source_id = Path(path).stem
    return spec


def cmd_spectrogram(args) -> int:
    cfg = _spectro_from_args(args)
    w = resample(load_pcm(args.input), cfg.sample_rate)
    spec = log_mel(w, cfg)
    spec.source_id = Path(args.input).stem
    write_sgm(spec, args.out)
    print(f"{args.out}: {spec.data.shape[0]}x{spec.data.shape[1]} "
          f"log-Mel frames (config {cfg.digest()})")
    return 0


def cmd_saliency(args) -> int:
    cfg = _spectro_from_args(args)
    occ = OcclusionConfig(window_frames=args.occ_window,
                          stride_frames=args.occ_stride,
                          mask_mode=args.mask, axis_mode=args.axis)
    spec = _load_spec(args.input, cfg)
    oracle = make_oracle(args.oracle)
    try:
        sal = occlusion_map(spec, oracle, args.target, occ)
    finally:
        oracle.close()
    export_map(sal, args.out)
    print(f"{args.out}: occlusion map for {args.target!r}, "
          f"range [{sal.data.min():.4g}, {sal.data.max():.4g}]")
    return 0


def cmd_saliency_import(args) -> int:
    m = import_map(args.input)
    h, w = m.data.shape
    print(f"{args.input}: {h}x{w} {m.method} map, target {m.target_label!r}, "
          f"config {m.spectro_config_digest}, "
          f"range [{m.data.min():.4g}, {m.data.max():.4g}]")
    return 0


def cmd_segment(args) -> int:
    cfg = SegmentationConfig(segment_duration_s=args.dur, k=args.k,
                             overlap_policy=args.overlap)
    spectro = _spectro_from_args(args)
    m = import_map(args.input)
    if args.abs:
        m.data = np.abs(m.data)
    selection = select_topk(window_scores(m, cfg, spectro), cfg, spectro)
    write_seg(selection, args.out)
    for seg in selection:
        print(f"rank {seg.rank}: frames [{seg.frame_start}, "
              f"{seg.frame_end_exclusive}) relevance "
              f"{seg.cumulative_relevance:.4g}")
    if selection.short_selection:
        print(f"note: only {len(selection)} disjoint windows available")
    return 0


def cmd_segment_random(args) -> int:
    cfg = SegmentationConfig(segment_duration_s=args.dur, k=args.k)
    spectro = _spectro_from_args(args)
    selection = random_segments(args.frames, cfg, spectro, args.seed)
    if args.out:
        write_seg(selection, args.out)
    for seg in selection:
        print(f"rank {seg.rank}: frames [{seg.frame_start}, "
              f"{seg.frame_end_exclusive})")
    if selection.overlap_fallback:
        print("note: overlap allowed after rejection budget")
    return 0


def cmd_cues(args) -> int:
    w = load_pcm(args.input)
    cfg = CueConfig()
    if args.full_clip:
        segments = None
        ranks = None
    else:
        segments = read_seg(args.segments)
        ranks = [seg.rank for seg in segments]
    vectors, agg = extract_cues(w, segments, cfg, shrillness=args.shrillness)
    rows = list(zip(ranks or [1] * len(vectors), vectors))
    header = list(CUE_COLUMNS)
    scale = np.ones(len(CUE_COLUMNS))
    if args.jitter_percent:
        ji = CUE_COLUMNS.index("jitter_ratio")
        header[ji] = "jitter_percent"
        scale[ji] = 100.0
    print("rank " + " ".join(header))
    for rank, vec in rows:
        vals = vec.as_array(include_voiced=True) * scale
        print(f"{rank} " + " ".join(format(v, ".6g") for v in vals))
    agg_vals = agg.mean.as_array(include_voiced=True) * scale
    print("AGG " + " ".join(format(v, ".6g") for v in agg_vals))
    if args.out:
        from .cues import write_cue
        write_cue(Path(args.input).stem, vectors, agg, args.out, ranks=ranks)
    return 0


def _records_from_dir(records_dir: Path, labels_path: str):
    records = []
    for source_id, true_label, predicted in read_lab(labels_path):
        utt_dir = records_dir / source_id
        if not utt_dir.is_dir():
            log.warning("%s: no record directory, skipped", source_id)
            continue
        records.append(pl.UtteranceRecord(
            source_id=source_id, true_label=true_label,
            predicted_label=predicted,
            salient_cues=pl._agg_from_cue_file(utt_dir / "cues.salient.cue"),
            fullclip_cues=pl._agg_from_cue_file(utt_dir / "cues.full.cue").mean,
            random_cues=pl._agg_from_cue_file(utt_dir / "cues.random.cue")))
    return records


def cmd_validate(args) -> int:
    records = _records_from_dir(Path(args.records), args.labels)
    if not records:
        print("error: no complete records found", file=sys.stderr)
        return 2
    overrides = pl.parse_arousal_overrides(args.arousal)
    labels_seen = sorted({r.true_label for r in records}
                         | {r.predicted_label for r in records})
    arousal_map = EmotionLabelSet.from_labels(labels_seen,
                                              overrides=overrides).arousal
    baseline = "full_clip" if args.baseline == "full" else "random_regions"
    vrecs = [validation_record(r, baseline, arousal_map) for r in records]
    print(render_delta_table(vrecs))
    print(render_sign_table(delta_sign_test(records, baseline, arousal_map)))
    plaus = plausibility_report(records, arousal_map, group_by=args.group_by)
    if plaus.note:
        print(plaus.note)
    for flag in plaus.flags:
        print(f"CONTRADICTION {flag.cue}: {flag.high_emotion} vs "
              f"{flag.low_emotion} (incorrect split "
              f"{flag.incorrect_high:.4g} vs {flag.incorrect_low:.4g})")
    return 0


def _parse_stats_csv(path):
    """Rebuild per-method emotion stats from a stats_*.csv table."""
    import csv
    from .cues import CUE_FIELDS
    stats_by_method: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = 3 + 2 * len(CUE_FIELDS)
        if len(header) != expected:
            raise SalientCuesError(f"{path}: expected {expected} columns, "
                                   f"got {len(header)}")
        for row in reader:
            emotion, method, n = row[0], row[1], int(row[2])
            vals = [float(v) for v in row[3:]]
            mean = np.array(vals[0::2] + [0.0])
            sd = np.array(vals[1::2] + [0.0])
            stats_by_method.setdefault(method, {})[emotion] = EmotionStats(
                emotion=emotion, mean=mean, sd=sd, count=n)
    return stats_by_method


def cmd_report(args) -> int:
    stats_by_method = _parse_stats_csv(args.stats)
    overrides = pl.parse_arousal_overrides(args.arousal)
    emotions = sorted({e for s in stats_by_method.values() for e in s})
    arousal_map = EmotionLabelSet.from_labels(emotions,
                                              overrides=overrides).arousal
    fmt = "markdown" if args.format == "md" else "csv"
    print(render_stats_table(stats_by_method, arousal_map, fmt=fmt,
                             paper_scaling=args.paper_scaling), end="")
    return 0


def cmd_run(args) -> int:
    if args.manifest:
        mapping = parse_manifest(args.manifest)
    elif args.config:
        mapping = parse_flat_config(args.config)
        unknown = sorted(set(mapping) - manifest_known_keys())
        if unknown:
            print(f"error: {args.config}: unknown config keys: {unknown}",
                  file=sys.stderr)
            return 2
    else:
        mapping = {}
    mapping = apply_env_overrides(mapping, os.environ)
    if args.corpus:
        mapping["corpus"] = args.corpus
    if args.labels:
        mapping["labels"] = args.labels
    if args.oracle:
        mapping["oracle"] = args.oracle
    if args.seed is not None:
        mapping["seed"] = str(args.seed)
    if "corpus" not in mapping or "labels" not in mapping:
        print("error: --corpus and --labels are required (directly, via "
              "--config, or via --manifest)", file=sys.stderr)
        return 2
    mapping.setdefault("labels",
                       str(Path(mapping["corpus"]) / "labels.lab"))
    settings = pl.settings_from_mapping(mapping)
    result = pl.run_pipeline(settings, args.out,
                             saliency_dir=args.saliency_dir,
                             resume=not args.fresh, jobs=args.jobs)
    print(f"processed {len(result.processed)} utterances, "
          f"{len(result.failed)} failed; outputs in {result.out_dir}")
    for sid, msg in sorted(result.failed.items()):
        print(f"  failed {sid}: {msg}", file=sys.stderr)
    return 0 if result.processed else 2


def cmd_synth(args) -> int:
    design = SynthDesign()
    ids = synth_corpus(args.out, n_high=args.n_high, n_low=args.n_low,
                       seed=args.seed, design=design,
                       high_label=args.high_label, low_label=args.low_label)
    print(f"wrote {len(ids)} clips + labels.lab to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salientcues",
        description="Occlusion saliency, salient-segment cues, and "
                    "explanation validation for speech emotion models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrogram", help="wav to SGM1 log-Mel matrix")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_spectro_args(p)
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("saliency", help="occlusion map to SGM1-S")
    p.add_argument("input", help="wav or .sgm file")
    p.add_argument("--oracle", required=True,
                   help="builtin:energy[:k=v,...] | builtin:uniform | "
                        "builtin:linear:<file> | exec:<cmd> | tcp:<host>:<port>")
    p.add_argument("--target", required=True, help="emotion label to explain")
    p.add_argument("--occ-window", type=int, default=10)
    p.add_argument("--occ-stride", type=int, default=3)
    p.add_argument("--mask", type=_mask_mode, default="mean")
    p.add_argument("--axis", choices=("time_only", "time_frequency"),
                   default="time_only")
    p.add_argument("--out", required=True)
    _add_spectro_args(p)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("saliency-import", help="inspect an SGM1-S file")
    p.add_argument("input")
    p.set_defaults(func=cmd_saliency_import)

    p = sub.add_parser("segment", help="top-k segments from an SGM1-S map")
    p.add_argument("input")
    p.add_argument("--dur", type=float, default=0.15)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--overlap", choices=("non_overlapping", "free"),
                   default="non_overlapping")
    p.add_argument("--abs", action="store_true",
                   help="rank by absolute relevance")
    p.add_argument("--out", required=True)
    _add_spectro_args(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("segment-random", help="seeded random baseline windows")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--dur", type=float, default=0.15)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out")
    _add_spectro_args(p)
    p.set_defaults(func=cmd_segment_random)

    p = sub.add_parser("cues", help="acoustic cues over segments or the clip")
    p.add_argument("input", help="wav file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--segments", help="SEG1 file")
    group.add_argument("--full-clip", action="store_true")
    p.add_argument("--shrillness", choices=("slope", "band-ratio"),
                   default="slope")
    p.add_argument("--jitter-percent", action="store_true",
                   help="display jitter as percent")
    p.add_argument("--out", help="also write a CUE1 file")
    p.set_defaults(func=cmd_cues)

    p = sub.add_parser("validate", help="deltas and sign tests over a run")
    p.add_argument("--records", required=True, help="pipeline output dir")
    p.add_argument("--labels", required=True, help="LAB1 file")
    p.add_argument("--baseline", choices=("full", "random"), default="full")
    p.add_argument("--group-by", choices=("true", "predicted"), default="true")
    p.add_argument("--arousal", default="",
                   help="overrides, e.g. surprise=high,calm=low")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="re-render a stats CSV")
    p.add_argument("--stats", required=True)
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.add_argument("--paper-scaling", action="store_true")
    p.add_argument("--arousal", default="")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="full pipeline over a labeled corpus")
    p.add_argument("--corpus", help="directory of <source_id>.wav files")
    p.add_argument("--labels", help="LAB1 file ('-' predictions are filled)")
    p.add_argument("--out", required=True)
    p.add_argument("--oracle")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat key=value overrides")
    p.add_argument("--manifest", help="re-run from an emitted manifest")
    p.add_argument("--saliency-dir",
                   help="import <source_id>.sgms instead of computing")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--fresh", action="store_true",
                   help="ignore existing per-utterance outputs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-high", type=int, default=20)
    p.add_argument("--n-low", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--high-label", default="angry")
    p.add_argument("--low-label", default="sad")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SalientCuesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
