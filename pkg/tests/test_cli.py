"""Command-line interface tests, driven through main() in process."""

import subprocess
import sys

import numpy as np
import pytest

from salientcues.cli import MASK_ALIASES, _mask_mode, main
from salientcues.cues import read_cue
from salientcues.report import parse_manifest
from salientcues.saliency import import_map
from salientcues.segmentation import read_seg
from salientcues.spectrogram import SpectroConfig, read_sgm

ORACLE = "builtin:energy:threshold=-3.9"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clicorpus")
    rc = main(["synth", "--out", str(root), "--n-high", "2",
               "--n-low", "2", "--seed", "5"])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def run_dir(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("clirun") / "out"
    rc = main(["run", "--corpus", str(corpus),
               "--labels", str(corpus / "labels.lab"),
               "--out", str(out), "--oracle", ORACLE, "--seed", "7"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def sgm_file(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("clisgm") / "clip.sgm"
    rc = main(["spectrogram", str(corpus / "angry_000.wav"),
               "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def sgms_file(sgm_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("clisgms") / "clip.sgms"
    rc = main(["saliency", str(sgm_file), "--oracle", ORACLE,
               "--target", "angry", "--out", str(out)])
    assert rc == 0
    return out


class TestMaskAliases:
    def test_aliases(self):
        assert MASK_ALIASES == {"mean": "spectrogram_mean",
                                "floor": "floor_value"}
        assert _mask_mode("mean") == "spectrogram_mean"
        assert _mask_mode("floor") == "floor_value"
        assert _mask_mode("fixed:-2.5") == "fixed:-2.5"

    def test_bad_mask_rejected_by_argparse(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["saliency", str(corpus / "angry_000.wav"),
                  "--oracle", ORACLE, "--target", "angry",
                  "--mask", "zeros", "--out", str(tmp_path / "x.sgms")])
        assert exc.value.code == 2


class TestSpectrogramCmd:
    def test_writes_parseable_sgm(self, sgm_file, capsys):
        data, sid = read_sgm(sgm_file)
        assert data.shape == (128, 132)
        assert sid == "angry_000"

    def test_prints_geometry(self, corpus, tmp_path, capsys):
        main(["spectrogram", str(corpus / "sad_000.wav"),
              "--out", str(tmp_path / "s.sgm")])
        out = capsys.readouterr().out
        assert "128x132" in out
        assert SpectroConfig().digest() in out

    def test_missing_input_is_exit_2(self, tmp_path, capsys):
        rc = main(["spectrogram", str(tmp_path / "nope.wav"),
                   "--out", str(tmp_path / "s.sgm")])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error:")


class TestSaliencyCmd:
    def test_map_from_sgm_input(self, sgms_file):
        m = import_map(sgms_file)
        assert m.data.shape == (128, 132)
        assert m.method == "occlusion"
        assert m.target_label == "angry"
        assert m.spectro_config_digest == SpectroConfig().digest()

    def test_map_from_wav_input_matches(self, corpus, sgms_file, tmp_path):
        out = tmp_path / "w.sgms"
        rc = main(["saliency", str(corpus / "angry_000.wav"),
                   "--oracle", ORACLE, "--target", "angry",
                   "--out", str(out)])
        assert rc == 0
        assert np.array_equal(import_map(out).data,
                              import_map(sgms_file).data)

    def test_floor_mask_accepted(self, sgm_file, tmp_path, capsys):
        rc = main(["saliency", str(sgm_file), "--oracle", ORACLE,
                   "--target", "angry", "--mask", "floor",
                   "--out", str(tmp_path / "f.sgms")])
        assert rc == 0
        assert "occlusion map" in capsys.readouterr().out

    def test_unknown_target_is_exit_2(self, sgm_file, tmp_path, capsys):
        rc = main(["saliency", str(sgm_file), "--oracle", ORACLE,
                   "--target", "bored", "--out", str(tmp_path / "x.sgms")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err

    def test_import_summary(self, sgms_file, capsys):
        rc = main(["saliency-import", str(sgms_file)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "128x132" in out and "occlusion" in out and "angry" in out


class TestSegmentCmd:
    def test_writes_seg_and_prints_ranks(self, sgms_file, tmp_path, capsys):
        out = tmp_path / "s.seg"
        rc = main(["segment", str(sgms_file), "--out", str(out)])
        assert rc == 0
        segs = read_seg(out)
        assert [s.rank for s in segs] == [1, 2, 3, 4, 5]
        printed = capsys.readouterr().out
        assert printed.count("rank ") == 5

    def test_k_and_abs_flags(self, sgms_file, tmp_path):
        plain = tmp_path / "a.seg"
        main(["segment", str(sgms_file), "--k", "2", "--out", str(plain)])
        assert len(read_seg(plain)) == 2
        absed = tmp_path / "b.seg"
        rc = main(["segment", str(sgms_file), "--k", "2", "--abs",
                   "--out", str(absed)])
        assert rc == 0
        for seg in read_seg(absed):
            assert seg.cumulative_relevance >= 0.0

    def test_random_is_seed_reproducible(self, tmp_path, capsys):
        a = tmp_path / "a.seg"
        b = tmp_path / "b.seg"
        c = tmp_path / "c.seg"
        for path, seed in ((a, "3"), (b, "3"), (c, "4")):
            rc = main(["segment-random", "--frames", "132", "--seed", seed,
                       "--out", str(path)])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()
        assert len(read_seg(a)) == 5

    def test_random_prints_without_out(self, capsys):
        rc = main(["segment-random", "--frames", "132", "--seed", "1"])
        assert rc == 0
        assert capsys.readouterr().out.count("rank ") == 5


class TestCuesCmd:
    def test_full_clip_output(self, corpus, capsys):
        rc = main(["cues", str(corpus / "sad_000.wav"), "--full-clip"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert lines[0].startswith("rank loudness_sones")
        assert lines[1].startswith("1 ")
        assert lines[-1].startswith("AGG ")
        assert len(lines) == 3

    def test_segments_mode_row_per_segment(self, corpus, sgms_file,
                                           tmp_path, capsys):
        seg = tmp_path / "s.seg"
        main(["segment", str(sgms_file), "--out", str(seg)])
        capsys.readouterr()
        rc = main(["cues", str(corpus / "angry_000.wav"),
                   "--segments", str(seg), "--out", str(tmp_path / "c.cue")])
        assert rc == 0
        lines = capsys.readouterr().out.strip().split("\n")
        assert len(lines) == 1 + 5 + 1
        sid, rows, _ = read_cue(tmp_path / "c.cue")
        assert sid == "angry_000"
        assert len(rows) == 5

    def test_jitter_percent_scales_display_only(self, corpus, capsys):
        main(["cues", str(corpus / "sad_000.wav"), "--full-clip"])
        plain = capsys.readouterr().out.strip().split("\n")
        main(["cues", str(corpus / "sad_000.wav"), "--full-clip",
              "--jitter-percent"])
        scaled = capsys.readouterr().out.strip().split("\n")
        assert "jitter_percent" in scaled[0]
        ji = plain[0].split().index("jitter_ratio")
        raw = float(plain[1].split()[ji])
        shown = float(scaled[1].split()[ji])
        assert shown == pytest.approx(raw * 100.0, rel=1e-5)

    def test_segments_and_full_clip_are_exclusive(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["cues", str(corpus / "sad_000.wav"), "--full-clip",
                  "--segments", str(tmp_path / "s.seg")])
        assert exc.value.code == 2


class TestRunCmd:
    def test_summary_line_and_tree(self, run_dir, capsys):
        assert (run_dir / "aggregate" / "manifest.txt").exists()
        assert (run_dir / "angry_000" / "cues.salient.cue").exists()

    def test_seed_flag_lands_in_manifest(self, run_dir):
        assert parse_manifest(run_dir / "aggregate" / "manifest.txt")[
            "seed"] == "7"

    def test_rerun_from_manifest_is_byte_identical(self, run_dir, tmp_path,
                                                   capsys):
        out2 = tmp_path / "out2"
        rc = main(["run", "--manifest",
                   str(run_dir / "aggregate" / "manifest.txt"),
                   "--out", str(out2)])
        assert rc == 0
        agg1 = (run_dir / "aggregate" / "stats_correct.csv").read_bytes()
        agg2 = (out2 / "aggregate" / "stats_correct.csv").read_bytes()
        assert agg1 == agg2

    def test_missing_corpus_args_is_exit_2(self, tmp_path, capsys):
        rc = main(["run", "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "required" in capsys.readouterr().err

    def test_unknown_config_key_is_exit_2(self, corpus, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("bogus=1\n")
        rc = main(["run", "--corpus", str(corpus),
                   "--labels", str(corpus / "labels.lab"),
                   "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_config_file_overrides(self, corpus, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(f"oracle={ORACLE}\nseed=11\nsegment.k=2\n")
        out = tmp_path / "out"
        rc = main(["run", "--corpus", str(corpus),
                   "--labels", str(corpus / "labels.lab"),
                   "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        mapping = parse_manifest(out / "aggregate" / "manifest.txt")
        assert mapping["seed"] == "11"
        assert mapping["segment.k"] == "2"
        segs = read_seg(out / "angry_000" / "segs.seg")
        assert len(segs) == 2

    def test_env_override_applies_and_flag_beats_env(self, corpus, tmp_path,
                                                     monkeypatch, capsys):
        monkeypatch.setenv("SALIENTCUES_SEED", "9")
        out = tmp_path / "env_out"
        rc = main(["run", "--corpus", str(corpus),
                   "--labels", str(corpus / "labels.lab"),
                   "--oracle", ORACLE, "--out", str(out)])
        assert rc == 0
        assert parse_manifest(out / "aggregate" / "manifest.txt")[
            "seed"] == "9"
        out2 = tmp_path / "flag_out"
        rc = main(["run", "--corpus", str(corpus),
                   "--labels", str(corpus / "labels.lab"),
                   "--oracle", ORACLE, "--seed", "3", "--out", str(out2)])
        assert rc == 0
        assert parse_manifest(out2 / "aggregate" / "manifest.txt")[
            "seed"] == "3"

    def test_all_failures_is_exit_2(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        (corpus / "bad_000.wav").write_bytes(b"not audio")
        (corpus / "labels.lab").write_text("bad_000 angry -\n")
        rc = main(["run", "--corpus", str(corpus),
                   "--labels", str(corpus / "labels.lab"),
                   "--oracle", ORACLE, "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "failed bad_000" in capsys.readouterr().err


class TestValidateCmd:
    def test_tables_printed(self, run_dir, capsys):
        rc = main(["validate", "--records", str(run_dir),
                   "--labels", str(run_dir / "aggregate" / "labels.lab")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "| emotion | arousal | n |" in out
        assert "no misclassifications" in out

    def test_random_baseline_variant(self, run_dir, capsys):
        rc = main(["validate", "--records", str(run_dir),
                   "--labels", str(run_dir / "aggregate" / "labels.lab"),
                   "--baseline", "random"])
        assert rc == 0

    def test_empty_records_is_exit_2(self, tmp_path, capsys):
        lab = tmp_path / "labels.lab"
        lab.write_text("ghost_000 angry angry\n")
        rc = main(["validate", "--records", str(tmp_path / "none"),
                   "--labels", str(lab)])
        assert rc == 2
        assert "no complete records" in capsys.readouterr().err


class TestReportCmd:
    def test_markdown_round_trip(self, run_dir, capsys):
        rc = main(["report", "--stats",
                   str(run_dir / "aggregate" / "stats_correct.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        assert out == (run_dir / "aggregate" / "stats_correct.md").read_text()

    def test_csv_echo_preserves_values(self, run_dir, capsys):
        rc = main(["report", "--stats",
                   str(run_dir / "aggregate" / "stats_correct.csv"),
                   "--format", "csv"])
        assert rc == 0
        out = capsys.readouterr().out
        original = (run_dir / "aggregate" / "stats_correct.csv").read_text()
        assert out == original

    def test_paper_scaling_headers(self, run_dir, capsys):
        rc = main(["report", "--stats",
                   str(run_dir / "aggregate" / "stats_correct.csv"),
                   "--paper-scaling"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "jitter_ratio (x0.0001)" in out

    def test_malformed_stats_is_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        rc = main(["report", "--stats", str(bad)])
        assert rc == 2


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run([sys.executable, "-m", "salientcues.cli",
                               "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "spectrogram" in proc.stdout and "synth" in proc.stdout

    def test_missing_subcommand_is_usage_error(self):
        proc = subprocess.run([sys.executable, "-m", "salientcues.cli"],
                              capture_output=True, text=True)
        assert proc.returncode == 2
