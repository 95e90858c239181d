"""Rendering of per-emotion cue tables and delta tables, plus the flat
key=value run manifest that makes a pipeline run reproducible.

Markdown output is for reading (4 significant digits, best-value bolding);
CSV output is for machines (full precision, no marks, dot decimal).
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .cues import CueConfig, CUE_FIELDS
from .errors import FormatError
from .saliency import OcclusionConfig
from .segmentation import SegmentationConfig
from .spectrogram import SpectroConfig
from .textio import fmt_float
from .validation import SHRILLNESS_INDEX, expected_signs

# Display-only scaling mirroring common table conventions; raw units are
# canonical everywhere else.
PAPER_SCALING = {"jitter_ratio": 1e4, "shrillness_slope": 1e2}

CONFIG_SECTIONS = {
    "spectro": SpectroConfig,
    "occlusion": OcclusionConfig,
    "segment": SegmentationConfig,
    "cues": CueConfig,
}
TOP_KEYS = ("seed", "oracle", "corpus", "labels")
OPTIONAL_KEYS = ("shrillness", "group_by", "arousal_overrides", "target",
                 "clip_duration_s", "trim_db")


def _sig(v: float, digits: int = 4) -> str:
    return format(float(v), f".{digits}g")


def _scale(values: np.ndarray, paper_scaling: bool) -> np.ndarray:
    if not paper_scaling:
        return values
    scaled = values.astype(np.float64).copy()
    for name, factor in PAPER_SCALING.items():
        scaled[CUE_FIELDS.index(name)] *= factor
    return scaled


def _cue_headers(paper_scaling: bool) -> list:
    headers = []
    for name in CUE_FIELDS:
        if paper_scaling and name in PAPER_SCALING:
            headers.append(f"{name} (x{1.0 / PAPER_SCALING[name]:g})")
        else:
            headers.append(name)
    return headers


def _markdown_table(headers, rows) -> str:
    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _csv_table(headers, rows) -> str:
    lines = [",".join(headers)]
    for row in rows:
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def render_stats_table(stats_by_method: dict, arousal_map: dict,
                       fmt: str = "markdown", paper_scaling: bool = False) -> str:
    """Emotion x method rows of `mean +/- SD` cells across the six cues.

    With several methods the better value per emotion/cue is bolded in
    markdown: larger for high-arousal emotions, smaller for low-arousal,
    inverted for the shrillness slope. Exact ties stay unmarked.
    """
    if not stats_by_method or not any(stats_by_method.values()):
        raise ValueError("no statistics to render")
    if fmt not in ("markdown", "csv"):
        raise ValueError(f"format must be markdown or csv, got {fmt!r}")
    methods = list(stats_by_method)
    emotions = sorted({e for stats in stats_by_method.values() for e in stats})
    cue_headers = _cue_headers(paper_scaling)

    best: dict = {}
    if len(methods) > 1 and fmt == "markdown":
        for emotion in emotions:
            present = [m for m in methods if emotion in stats_by_method[m]]
            if len(present) < 2:
                continue
            prefer_high = arousal_map.get(emotion) == "high"
            for ci in range(len(CUE_FIELDS)):
                vals = [stats_by_method[m][emotion].mean[ci] for m in present]
                want_max = prefer_high != (ci == SHRILLNESS_INDEX)
                target = max(vals) if want_max else min(vals)
                winners = [m for m, v in zip(present, vals) if v == target]
                if len(winners) == 1:
                    best[(emotion, winners[0], ci)] = True

    rows = []
    for emotion in emotions:
        for method in methods:
            stats = stats_by_method[method].get(emotion)
            if stats is None:
                continue
            mean6 = _scale(stats.mean[:len(CUE_FIELDS)], paper_scaling)
            sd6 = _scale(stats.sd[:len(CUE_FIELDS)], paper_scaling)
            cells = []
            for ci in range(len(CUE_FIELDS)):
                cell = f"{_sig(mean6[ci])} ± {_sig(sd6[ci])}"
                if best.get((emotion, method, ci)):
                    cell = f"**{cell}**"
                cells.append(cell)
            rows.append([emotion, method, str(stats.count)] + cells)

    if fmt == "markdown":
        return _markdown_table(["emotion", "method", "n"] + cue_headers, rows)
    headers = ["emotion", "method", "n"]
    for name in _cue_headers(paper_scaling):
        headers += [f"{name}_mean", f"{name}_sd"]
    csv_rows = []
    for emotion in emotions:
        for method in methods:
            stats = stats_by_method[method].get(emotion)
            if stats is None:
                continue
            mean6 = _scale(stats.mean[:len(CUE_FIELDS)], paper_scaling)
            sd6 = _scale(stats.sd[:len(CUE_FIELDS)], paper_scaling)
            row = [emotion, method, str(stats.count)]
            for ci in range(len(CUE_FIELDS)):
                row += [fmt_float(mean6[ci]), fmt_float(sd6[ci])]
            csv_rows.append(row)
    return _csv_table(headers, csv_rows)


def render_delta_table(vrecords, fmt: str = "markdown",
                       paper_scaling: bool = False) -> str:
    """Per-emotion mean deltas; markdown marks cells whose sign matches the
    arousal expectation with a trailing `*`."""
    if not vrecords:
        raise ValueError("no validation records to render")
    if fmt not in ("markdown", "csv"):
        raise ValueError(f"format must be markdown or csv, got {fmt!r}")
    by_emotion: dict = {}
    for v in vrecords:
        by_emotion.setdefault(v.emotion, []).append(v)
    headers = ["emotion", "arousal", "n"] + _cue_headers(paper_scaling)
    rows = []
    for emotion in sorted(by_emotion):
        vrecs = by_emotion[emotion]
        arousal = vrecs[0].arousal
        mean = np.stack([v.delta for v in vrecs]).mean(axis=0)
        scaled = _scale(mean, paper_scaling)
        signs = expected_signs(arousal)
        cells = []
        for ci in range(len(CUE_FIELDS)):
            if fmt == "csv":
                cells.append(fmt_float(scaled[ci]))
            else:
                mark = "*" if mean[ci] * signs[ci] > 0.0 else ""
                cells.append(_sig(scaled[ci]) + mark)
        rows.append([emotion, arousal, str(len(vrecs))] + cells)
    table = _markdown_table if fmt == "markdown" else _csv_table
    return table(headers, rows)


def render_sign_table(sign_results: dict, fmt: str = "markdown") -> str:
    """Per-emotion expected-sign match fractions from delta_sign_test."""
    if not sign_results:
        raise ValueError("no sign-test results to render")
    headers = ["emotion", "arousal", "n"] + list(CUE_FIELDS)
    rows = []
    for emotion in sorted(sign_results):
        res = sign_results[emotion]
        cells = [format(f, ".3f") for f in res.fractions]
        rows.append([emotion, res.arousal, str(res.count)] + cells)
    table = _markdown_table if fmt == "markdown" else _csv_table
    return table(headers, rows)


# --- run manifest ---------------------------------------------------------

def manifest_required_keys() -> frozenset:
    keys = set(TOP_KEYS)
    for prefix, cls in CONFIG_SECTIONS.items():
        for f in dataclasses.fields(cls):
            keys.add(f"{prefix}.{f.name}")
    return frozenset(keys)


def manifest_known_keys() -> frozenset:
    return manifest_required_keys() | set(OPTIONAL_KEYS)


def emit_run_manifest(mapping: dict) -> str:
    """Serialize every tunable as sorted `key=value` lines."""
    missing = sorted(manifest_required_keys() - set(mapping))
    if missing:
        raise ValueError(f"manifest mapping is missing keys: {missing}")
    lines = ["# salientcues run manifest"]
    for key in sorted(mapping):
        lines.append(f"{key}={mapping[key]}")
    return "\n".join(lines) + "\n"


def write_manifest(mapping: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_run_manifest(mapping))


def parse_flat_config(path) -> dict:
    """Read `key=value` lines; blank lines and # comments are skipped."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise FormatError(f"{path}:{lineno}: expected key=value, "
                                  f"got {stripped!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            if key in mapping:
                raise FormatError(f"{path}:{lineno}: duplicate key {key!r}")
            mapping[key] = value.strip()
    return mapping


def parse_manifest(path) -> dict:
    """Like parse_flat_config but refuses unknown keys and names every
    missing required key."""
    mapping = parse_flat_config(path)
    known = manifest_known_keys()
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise FormatError(f"{path}: unknown manifest keys: {unknown}")
    missing = sorted(manifest_required_keys() - set(mapping))
    if missing:
        raise FormatError(f"{path}: missing manifest keys: {missing}")
    return mapping


ENV_PREFIX = "SALIENTCUES_"


def apply_env_overrides(mapping: dict, environ) -> dict:
    """Overlay SALIENTCUES_* variables; dots map to double underscores
    (SALIENTCUES_SEGMENT__K=3 sets segment.k)."""
    out = dict(mapping)
    known = manifest_known_keys()
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if key not in known:
            raise ValueError(f"environment override {name} maps to unknown "
                             f"key {key!r}")
        out[key] = value
    return out
