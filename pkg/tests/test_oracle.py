"""Classifier back-ends: built-ins, the LINW weights file, and the line
protocol client exercised against a scripted subprocess server."""

import math
import sys

import numpy as np
import pytest

from salientcues.errors import ProtocolError, ShapeError, TransportError
from salientcues.oracle import (DEFAULT_LABELS, EmotionLabelSet, EnergyOracle,
                                ExternalOracle, LinearOracle,
                                ProbabilityVector, UniformOracle,
                                connect_external, make_oracle, read_linw,
                                write_linw)

FAKE_SERVER = r'''
import json, math, sys, time

mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
labels = ["angry", "happy", "neutral", "sad"]


def send(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


hello = json.loads(sys.stdin.readline())
if hello != {"hello": "ORC1"}:
    send({"error": "bad handshake"})
    sys.exit(1)
if mode == "nolabels":
    send({"ok": True})
    sys.exit(0)
send({"labels": labels})

for line in sys.stdin:
    req = json.loads(line)
    rid = req.get("id")
    if mode == "error":
        send({"id": rid, "error": "synthetic failure"})
        continue
    if mode == "badid":
        send({"id": "someone-else", "probs": [0.25, 0.25, 0.25, 0.25]})
        continue
    if mode == "eof":
        sys.exit(0)
    if mode == "slow":
        time.sleep(30)
        continue
    if mode == "garbage":
        sys.stdout.write("this is not json\n")
        sys.stdout.flush()
        continue
    m = sum(req["data"]) / len(req["data"])
    z = [math.exp(i * math.tanh(m)) for i in range(4)]
    probs = [v / sum(z) for v in z]
    if mode == "badsum":
        probs = [p * (1.0 + 5e-5) for p in probs]
    if mode == "hugesum":
        probs = [p * 1.001 for p in probs]
    send({"id": rid, "probs": probs})
'''


@pytest.fixture
def fake_server(tmp_path):
    script = tmp_path / "fake_oracle.py"
    script.write_text(FAKE_SERVER)

    def endpoint(mode="ok"):
        return f"exec:{sys.executable} {script} {mode}"

    return endpoint


def expected_fake_probs(x: np.ndarray) -> np.ndarray:
    m = float(np.mean(x))
    z = np.array([math.exp(i * math.tanh(m)) for i in range(4)])
    return z / z.sum()


class TestLabelSet:
    def test_default_vocabulary(self):
        ls = EmotionLabelSet.default()
        assert ls.labels == DEFAULT_LABELS
        assert ls.arousal["angry"] == "high"
        assert ls.arousal["happy"] == "high"
        assert ls.arousal["fear"] == "high"
        assert ls.arousal["neutral"] == "low"
        assert ls.arousal["sad"] == "low"
        assert ls.arousal["disgust"] == "low"

    def test_case_insensitive_inference(self):
        ls = EmotionLabelSet.from_labels(("Anger", "Sadness"))
        assert ls.arousal == {"Anger": "high", "Sadness": "low"}

    def test_unknown_label_needs_override(self):
        with pytest.raises(ValueError, match="override"):
            EmotionLabelSet.from_labels(("contempt",))
        ls = EmotionLabelSet.from_labels(("contempt",), overrides={"contempt": "low"})
        assert ls.arousal["contempt"] == "low"

    def test_override_beats_inference(self):
        ls = EmotionLabelSet.from_labels(("happy",), overrides={"happy": "low"})
        assert ls.arousal["happy"] == "low"

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValueError):
            EmotionLabelSet(labels=("a", "a"), arousal={"a": "high"})

    def test_bad_arousal_value(self):
        with pytest.raises(ValueError):
            EmotionLabelSet(labels=("a",), arousal={"a": "medium"})

    def test_index(self):
        ls = EmotionLabelSet.default()
        assert ls.index("fear") == 2
        with pytest.raises(ValueError, match="unknown label"):
            ls.index("bored")


class TestProbabilityVector:
    def test_lookup_and_argmax(self):
        pv = ProbabilityVector(np.array([0.2, 0.5, 0.3]), ("a", "b", "c"))
        assert pv["b"] == 0.5
        assert pv.argmax_label() == "b"

    def test_sum_must_be_one(self):
        with pytest.raises(ProtocolError, match="sum"):
            ProbabilityVector(np.array([0.5, 0.4]), ("a", "b"))

    def test_range_checked(self):
        with pytest.raises(ProtocolError):
            ProbabilityVector(np.array([-0.1, 1.1]), ("a", "b"))

    def test_nan_rejected(self):
        with pytest.raises(ProtocolError):
            ProbabilityVector(np.array([np.nan, 1.0]), ("a", "b"))

    def test_shape_checked(self):
        with pytest.raises(ShapeError):
            ProbabilityVector(np.array([1.0]), ("a", "b"))


class TestUniformOracle:
    def test_always_uniform(self):
        o = UniformOracle()
        pv = o.predict(np.random.default_rng(0).standard_normal((4, 5)))
        np.testing.assert_array_equal(pv.probs, np.full(6, 1.0 / 6.0))


class TestEnergyOracle:
    def test_sigmoid_of_mean(self):
        o = EnergyOracle(threshold=-2.0)
        x = np.full((3, 4), -1.0)
        pv = o.predict(x)
        p_loud = 1.0 / (1.0 + math.exp(-1.0))
        assert pv["angry"] == pytest.approx(p_loud, rel=1e-12)
        assert pv["sad"] == pytest.approx((1 - p_loud) / 2, rel=1e-12)
        assert pv["happy"] == pytest.approx((1 - p_loud) / 8, rel=1e-12)

    def test_loud_input_predicts_loud_label(self):
        o = EnergyOracle(threshold=-10.0)
        assert o.predict(np.zeros((2, 2))).argmax_label() == "angry"

    def test_quiet_input_predicts_quiet_label(self):
        o = EnergyOracle(threshold=-10.0)
        assert o.predict(np.full((2, 2), -23.02585)).argmax_label() == "sad"

    def test_decision_boundary_sits_ln2_below_threshold(self):
        # argmax flips when p_loud crosses 1/3, i.e. mean == threshold - ln 2
        o = EnergyOracle(threshold=0.0)
        eps = 1e-6
        above = np.full((1, 1), -math.log(2.0) + eps)
        below = np.full((1, 1), -math.log(2.0) - eps)
        assert o.predict(above).argmax_label() == "angry"
        assert o.predict(below).argmax_label() == "sad"

    def test_extreme_means_do_not_overflow(self):
        o = EnergyOracle(threshold=0.0)
        assert np.all(np.isfinite(o.predict(np.full((1, 1), 1e6)).probs))
        assert np.all(np.isfinite(o.predict(np.full((1, 1), -1e6)).probs))

    def test_two_label_set(self):
        ls = EmotionLabelSet.from_labels(("angry", "sad"))
        o = EnergyOracle(threshold=0.0, labels=ls)
        pv = o.predict(np.full((1, 1), 3.0))
        assert pv.probs.sum() == pytest.approx(1.0)
        assert pv["sad"] == pytest.approx(1.0 - pv["angry"], rel=1e-12)

    def test_labels_validated(self):
        with pytest.raises(ValueError):
            EnergyOracle(loud_label="angry", quiet_label="angry")
        with pytest.raises(ValueError):
            EnergyOracle(loud_label="nonexistent")

    def test_input_shape_enforced_when_set(self):
        o = EnergyOracle(input_shape=(2, 3))
        with pytest.raises(ShapeError):
            o.predict(np.zeros((3, 2)))


class TestLinearOracle:
    def test_softmax_matches_direct_computation(self, rng):
        labels = ("angry", "happy", "sad")
        weights = {l: rng.standard_normal((4, 6)) for l in labels}
        o = LinearOracle(weights)
        x = rng.standard_normal((4, 6))
        logits = np.array([np.sum(weights[l] * x) for l in o.labels.labels])
        e = np.exp(logits - logits.max())
        np.testing.assert_allclose(o.predict(x).probs, e / e.sum(), rtol=1e-12)

    def test_label_order_is_sorted_weight_keys(self, rng):
        weights = {l: rng.standard_normal((2, 2)) for l in ("sad", "angry")}
        assert LinearOracle(weights).labels.labels == ("angry", "sad")

    def test_shape_mismatch_rejected(self, rng):
        weights = {"angry": np.zeros((2, 2)), "sad": np.zeros((3, 2))}
        with pytest.raises(ShapeError):
            LinearOracle(weights)

    def test_input_shape_enforced(self, rng):
        weights = {l: rng.standard_normal((2, 2)) for l in ("angry", "sad")}
        o = LinearOracle(weights)
        with pytest.raises(ShapeError):
            o.predict(np.zeros((2, 3)))

    def test_large_logits_stable(self):
        weights = {"angry": np.full((1, 1), 500.0), "sad": np.full((1, 1), -500.0)}
        pv = LinearOracle(weights).predict(np.full((1, 1), 10.0))
        assert np.all(np.isfinite(pv.probs))
        assert pv.argmax_label() == "angry"


class TestLinwFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        weights = {l: rng.standard_normal((3, 5)) for l in ("angry", "happy", "sad")}
        path = tmp_path / "w.linw"
        write_linw(weights, path)
        back = read_linw(path)
        assert list(back) == list(weights)
        for l in weights:
            np.testing.assert_array_equal(back[l], weights[l])

    def test_header(self, tmp_path, rng):
        weights = {"angry": rng.standard_normal((2, 4))}
        path = tmp_path / "w.linw"
        write_linw(weights, path)
        assert path.read_text().splitlines()[0] == "LINW 1 2 4"

    def test_feeds_linear_oracle_via_make_oracle(self, tmp_path, rng):
        weights = {l: rng.standard_normal((2, 3)) for l in ("angry", "sad")}
        path = tmp_path / "w.linw"
        write_linw(weights, path)
        o = make_oracle(f"builtin:linear:{path}")
        x = rng.standard_normal((2, 3))
        np.testing.assert_allclose(
            o.predict(x).probs, LinearOracle(weights).predict(x).probs, rtol=1e-15)


class TestMakeOracle:
    def test_builtin_uniform(self):
        assert isinstance(make_oracle("builtin:uniform"), UniformOracle)

    def test_builtin_energy_with_options(self):
        o = make_oracle("builtin:energy:threshold=-3.5,loud=happy,quiet=neutral")
        assert isinstance(o, EnergyOracle)
        assert o.threshold == -3.5
        assert o.loud_label == "happy" and o.quiet_label == "neutral"

    def test_unknown_option_rejected(self):
        with pytest.raises(ValueError):
            make_oracle("builtin:energy:gain=2")

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError):
            make_oracle("builtin:mystery")


class TestExternalOracle:
    def test_handshake_learns_labels(self, fake_server):
        with connect_external(fake_server("ok"), timeout=10.0) as o:
            assert o.labels.labels == ("angry", "happy", "neutral", "sad")

    def test_probs_echo_transmitted_matrix(self, fake_server, rng):
        x = rng.standard_normal((5, 7))
        with connect_external(fake_server("ok"), timeout=10.0) as o:
            pv = o.predict(x)
        np.testing.assert_allclose(pv.probs, expected_fake_probs(x), rtol=1e-9)

    def test_multiple_requests_on_one_connection(self, fake_server, rng):
        with connect_external(fake_server("ok"), timeout=10.0) as o:
            for _ in range(3):
                x = rng.standard_normal((2, 3))
                np.testing.assert_allclose(o.predict(x).probs,
                                           expected_fake_probs(x), rtol=1e-9)

    def test_error_reply_raises(self, fake_server):
        with connect_external(fake_server("error"), timeout=10.0) as o:
            with pytest.raises(ProtocolError, match="synthetic failure"):
                o.predict(np.zeros((2, 2)))

    def test_id_mismatch_raises(self, fake_server):
        with connect_external(fake_server("badid"), timeout=10.0) as o:
            with pytest.raises(ProtocolError, match="does not match"):
                o.predict(np.zeros((2, 2)))

    def test_small_sum_drift_renormalized_with_warning(self, fake_server, caplog):
        with connect_external(fake_server("badsum"), timeout=10.0) as o:
            with caplog.at_level("WARNING"):
                pv = o.predict(np.zeros((2, 2)))
        assert pv.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert any("renormalizing" in r.message for r in caplog.records)

    def test_large_sum_drift_rejected(self, fake_server):
        with connect_external(fake_server("hugesum"), timeout=10.0) as o:
            with pytest.raises(ProtocolError, match="beyond tolerance"):
                o.predict(np.zeros((2, 2)))

    def test_garbage_reply_raises(self, fake_server):
        with connect_external(fake_server("garbage"), timeout=10.0) as o:
            with pytest.raises(ProtocolError, match="malformed"):
                o.predict(np.zeros((2, 2)))

    def test_server_exit_mid_request(self, fake_server):
        with connect_external(fake_server("eof"), timeout=10.0) as o:
            with pytest.raises(TransportError, match="closed"):
                o.predict(np.zeros((2, 2)))

    def test_timeout(self, fake_server):
        with connect_external(fake_server("slow"), timeout=0.3) as o:
            with pytest.raises(TransportError, match="timed out"):
                o.predict(np.zeros((2, 2)))

    def test_handshake_without_labels_fails(self, fake_server):
        with pytest.raises(ProtocolError, match="labels"):
            connect_external(fake_server("nolabels"), timeout=10.0)

    def test_unspawnable_command(self):
        with pytest.raises(TransportError):
            connect_external("exec:/nonexistent/oracle-binary", timeout=2.0)

    def test_tcp_endpoint_validation(self):
        with pytest.raises(ValueError):
            connect_external("tcp:localhost")
        with pytest.raises(ValueError):
            connect_external("udp:localhost:99")

    def test_tcp_connection_refused(self):
        with pytest.raises(TransportError):
            connect_external("tcp:127.0.0.1:1", timeout=2.0)

    def test_arousal_overrides_forwarded(self, fake_server):
        with connect_external(fake_server("ok"), timeout=10.0,
                              arousal_overrides={"neutral": "high"}) as o:
            assert o.labels.arousal["neutral"] == "high"
