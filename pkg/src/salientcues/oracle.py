"""Class-probability oracles for perturbation saliency.

Builtin oracles make the whole pipeline testable at desk scale; external
(neural) models are reached over the ORC1 wire protocol: newline-delimited
JSON records over stdio of a spawned process (``exec:<cmd>``) or a TCP
socket (``tcp:<host>:<port>``). One in-flight request per connection.
"""

from dataclasses import dataclass
import json
import logging
import os
import select
import shlex
import socket
import subprocess
import uuid

import numpy as np

from .errors import ProtocolError, ShapeError, TransportError
from .spectrogram import LogMelSpectrogram

log = logging.getLogger(__name__)

DEFAULT_LABELS = ("angry", "disgust", "fear", "happy", "neutral", "sad")

# Arousal grouping of the common emotion vocabularies; disgust is not part of
# the canonical high/low sets, so it stays overridable (default: low).
HIGH_AROUSAL = {"happy", "happiness", "angry", "anger", "fear", "joy", "surprise"}
LOW_AROUSAL = {"neutral", "sad", "sadness", "calm", "boredom", "disgust"}

# Reply sums within this of 1.0 are accepted as-is; up to RENORM_TOL they are
# renormalized with a warning; beyond that the model server is broken.
SUM_TOL = 1e-6
RENORM_TOL = 1e-4


@dataclass(frozen=True)
class EmotionLabelSet:
    labels: tuple
    arousal: dict  # label -> "high" | "low"

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        missing = [l for l in self.labels if l not in self.arousal]
        if missing:
            raise ValueError(f"labels missing an arousal tag: {missing}")
        bad = {l: a for l, a in self.arousal.items() if a not in ("high", "low")}
        if bad:
            raise ValueError(f"arousal tags must be 'high' or 'low': {bad}")

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"unknown label {label!r}; known: {self.labels}") from None

    @classmethod
    def from_labels(cls, labels, overrides=None) -> "EmotionLabelSet":
        """Infer arousal tags from the standard vocabulary; overrides win."""
        overrides = dict(overrides or {})
        arousal = {}
        for l in labels:
            if l in overrides:
                arousal[l] = overrides[l]
            elif l.lower() in HIGH_AROUSAL:
                arousal[l] = "high"
            elif l.lower() in LOW_AROUSAL:
                arousal[l] = "low"
            else:
                raise ValueError(
                    f"no arousal tag known for label {l!r}; pass an override")
        return cls(labels=tuple(labels), arousal=arousal)

    @classmethod
    def default(cls) -> "EmotionLabelSet":
        return cls.from_labels(DEFAULT_LABELS)


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    probs: np.ndarray
    labels: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.shape != (len(self.labels),):
            raise ShapeError(f"expected {len(self.labels)} probabilities, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ProtocolError("probabilities contain NaN/Inf")
        if p.min() < 0.0 or p.max() > 1.0 + SUM_TOL:
            raise ProtocolError(f"probabilities outside [0, 1]: min {p.min()}, max {p.max()}")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ProtocolError(f"probabilities sum to {p.sum()}, not 1")

    def __getitem__(self, label: str) -> float:
        return float(self.probs[self.labels.index(label)])

    def argmax_label(self) -> str:
        return self.labels[int(np.argmax(self.probs))]


def _as_matrix(spec) -> np.ndarray:
    if isinstance(spec, LogMelSpectrogram):
        return spec.data
    return np.asarray(spec, dtype=np.float64)


class Oracle:
    """Contract: `labels` (EmotionLabelSet), `input_shape` ((H, W) or None),
    and a deterministic `predict(spec) -> ProbabilityVector`."""

    labels: EmotionLabelSet
    input_shape = None

    def predict(self, spec) -> ProbabilityVector:
        raise NotImplementedError

    def _check_shape(self, x: np.ndarray) -> np.ndarray:
        if self.input_shape is not None and x.shape != self.input_shape:
            raise ShapeError(f"oracle expects {self.input_shape}, got {x.shape}")
        return x

    def close(self):
        pass


class UniformOracle(Oracle):
    def __init__(self, labels: EmotionLabelSet | None = None):
        self.labels = labels or EmotionLabelSet.default()

    def predict(self, spec) -> ProbabilityVector:
        n = len(self.labels)
        return ProbabilityVector(np.full(n, 1.0 / n), self.labels.labels)


class EnergyOracle(Oracle):
    """p(loud_label) = sigmoid(mean(spec) - threshold).

    The remainder goes half to `quiet_label` and is split evenly over the
    rest, so a silent spectrogram's argmax is the designated quiet label.
    """

    def __init__(self, threshold: float = -10.0, loud_label: str = "angry",
                 quiet_label: str = "sad", labels: EmotionLabelSet | None = None,
                 input_shape=None):
        self.labels = labels or EmotionLabelSet.default()
        self.labels.index(loud_label)
        self.labels.index(quiet_label)
        if loud_label == quiet_label:
            raise ValueError("loud_label and quiet_label must differ")
        self.threshold = float(threshold)
        self.loud_label = loud_label
        self.quiet_label = quiet_label
        self.input_shape = input_shape

    def predict(self, spec) -> ProbabilityVector:
        x = self._check_shape(_as_matrix(spec))
        z = np.clip(float(x.mean()) - self.threshold, -500.0, 500.0)
        p_loud = 1.0 / (1.0 + np.exp(-z))
        rest = 1.0 - p_loud
        n = len(self.labels)
        probs = np.zeros(n)
        if n == 2:
            quiet_share, other_share = rest, 0.0
        else:
            quiet_share, other_share = rest / 2.0, rest / 2.0 / (n - 2)
        for i, l in enumerate(self.labels.labels):
            if l == self.loud_label:
                probs[i] = p_loud
            elif l == self.quiet_label:
                probs[i] = quiet_share
            else:
                probs[i] = other_share
        return ProbabilityVector(probs, self.labels.labels)


class LinearOracle(Oracle):
    """softmax over per-label inner products <weights_c, spec>."""

    def __init__(self, weights: dict, labels: EmotionLabelSet | None = None):
        self.labels = labels or EmotionLabelSet.from_labels(tuple(sorted(weights)))
        missing = [l for l in self.labels.labels if l not in weights]
        if missing:
            raise ShapeError(f"missing weight matrices for labels: {missing}")
        mats = [np.asarray(weights[l], dtype=np.float64) for l in self.labels.labels]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1 or mats[0].ndim != 2:
            raise ShapeError(f"weight matrices must share one 2-D shape, got {shapes}")
        self.weights = np.stack(mats)
        self.input_shape = mats[0].shape

    def predict(self, spec) -> ProbabilityVector:
        x = self._check_shape(_as_matrix(spec))
        logits = np.tensordot(self.weights, x, axes=([1, 2], [0, 1]))
        logits -= logits.max()
        e = np.exp(logits)
        return ProbabilityVector(e / e.sum(), self.labels.labels)


# --- ORC1 client ---------------------------------------------------------

class _LineChannel:
    """Newline-delimited record transport with an absolute per-read timeout."""

    def __init__(self, timeout: float):
        self.timeout = timeout
        self._buf = b""

    def _fd(self) -> int:
        raise NotImplementedError

    def _write(self, data: bytes):
        raise NotImplementedError

    def send_record(self, obj) -> None:
        try:
            self._write(json.dumps(obj).encode("utf-8") + b"\n")
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"oracle connection lost while sending: {exc}") from exc

    def recv_record(self):
        while b"\n" not in self._buf:
            ready, _, _ = select.select([self._fd()], [], [], self.timeout)
            if not ready:
                raise TransportError(f"oracle reply timed out after {self.timeout}s")
            chunk = os.read(self._fd(), 65536)
            if not chunk:
                detail = f" (partial reply: {self._buf[:80]!r})" if self._buf else ""
                raise TransportError("oracle connection closed mid-reply" + detail)
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed oracle reply: {line[:200]!r}") from exc


class _ExecChannel(_LineChannel):
    def __init__(self, cmd: str, timeout: float):
        super().__init__(timeout)
        try:
            self.proc = subprocess.Popen(
                shlex.split(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise TransportError(f"cannot spawn oracle {cmd!r}: {exc}") from exc

    def _fd(self) -> int:
        return self.proc.stdout.fileno()

    def _write(self, data: bytes):
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def close(self):
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class _TcpChannel(_LineChannel):
    def __init__(self, host: str, port: int, timeout: float):
        super().__init__(timeout)
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach oracle at {host}:{port}: {exc}") from exc

    def _fd(self) -> int:
        return self.sock.fileno()

    def _write(self, data: bytes):
        self.sock.sendall(data)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class ExternalOracle(Oracle):
    """ORC1 protocol client; see FORMATS.md for the record grammar."""

    def __init__(self, channel: _LineChannel, arousal_overrides=None):
        self._channel = channel
        self._channel.send_record({"hello": "ORC1"})
        reply = self._channel.recv_record()
        if not isinstance(reply, dict) or "labels" not in reply:
            raise ProtocolError(f"handshake reply lacks labels: {reply!r}")
        labels = reply["labels"]
        if (not isinstance(labels, list) or not labels
                or not all(isinstance(l, str) for l in labels)):
            raise ProtocolError(f"handshake labels malformed: {labels!r}")
        self.labels = EmotionLabelSet.from_labels(labels, overrides=arousal_overrides)

    def predict(self, spec) -> ProbabilityVector:
        x = _as_matrix(spec)
        req_id = uuid.uuid4().hex
        self._channel.send_record({
            "id": req_id, "h": int(x.shape[0]), "w": int(x.shape[1]),
            "data": [float(v) for v in x.ravel()],
        })
        reply = self._channel.recv_record()
        if not isinstance(reply, dict):
            raise ProtocolError(f"reply is not a record: {reply!r}")
        if "error" in reply:
            raise ProtocolError(f"oracle error reply: {reply['error']}")
        if reply.get("id") != req_id:
            raise ProtocolError(f"reply id {reply.get('id')!r} does not match request {req_id!r}")
        probs = reply.get("probs")
        if not isinstance(probs, list) or len(probs) != len(self.labels):
            raise ProtocolError(f"expected {len(self.labels)} probs, got {probs!r}")
        p = np.asarray(probs, dtype=np.float64)
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0 + RENORM_TOL:
            raise ProtocolError(f"probs outside [0, 1]: {probs!r}")
        dev = abs(p.sum() - 1.0)
        if dev > RENORM_TOL:
            raise ProtocolError(f"probs sum to {p.sum():.6f}, beyond tolerance {RENORM_TOL}")
        if dev > SUM_TOL:
            log.warning("oracle probs sum to %.8f; renormalizing", p.sum())
            p = p / p.sum()
        return ProbabilityVector(p, self.labels.labels)

    def close(self):
        self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect_external(endpoint: str, timeout: float = 30.0,
                     arousal_overrides=None) -> ExternalOracle:
    """Open an ORC1 connection: ``exec:<command>`` or ``tcp:<host>:<port>``."""
    if endpoint.startswith("exec:"):
        channel = _ExecChannel(endpoint[len("exec:"):], timeout)
    elif endpoint.startswith("tcp:"):
        hostport = endpoint[len("tcp:"):]
        host, _, port = hostport.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"tcp endpoint must be tcp:<host>:<port>, got {endpoint!r}")
        channel = _TcpChannel(host, int(port), timeout)
    else:
        raise ValueError(f"unknown oracle endpoint {endpoint!r}")
    try:
        return ExternalOracle(channel, arousal_overrides=arousal_overrides)
    except Exception:
        channel.close()
        raise


# LINW weights file: "LINW n_labels H W", then per label one name line
# followed by H rows of W floats.

def write_linw(weights: dict, path) -> None:
    from .textio import fmt_row
    names = list(weights)
    h, w = np.asarray(weights[names[0]]).shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"LINW {len(names)} {h} {w}\n")
        for name in names:
            fh.write(name + "\n")
            for row in np.asarray(weights[name]):
                fh.write(fmt_row(row) + "\n")


def read_linw(path) -> dict:
    from .errors import FormatError
    from .textio import parse_floats
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "LINW":
            raise FormatError(f"{path}: LINW header must be 'LINW n_labels H W'")
        n, h, w = (int(v) for v in header[1:])
        weights = {}
        for _ in range(n):
            name = fh.readline().strip()
            if not name:
                raise FormatError(f"{path}: missing label name line")
            mat = np.empty((h, w))
            for i in range(h):
                mat[i] = parse_floats(fh.readline(), w, f"{path}:{name} row {i}")
            weights[name] = mat
    return weights


def make_oracle(spec_str: str, labels: EmotionLabelSet | None = None,
                timeout: float = 30.0) -> Oracle:
    """Build an oracle from its CLI string form.

    ``builtin:uniform`` | ``builtin:energy[:threshold=V,loud=L,quiet=Q]`` |
    ``builtin:linear:<weights-file>`` | ``exec:<cmd>`` | ``tcp:<host>:<port>``
    """
    if spec_str.startswith(("exec:", "tcp:")):
        return connect_external(spec_str, timeout=timeout)
    if spec_str == "builtin:uniform":
        return UniformOracle(labels)
    if spec_str == "builtin:energy" or spec_str.startswith("builtin:energy:"):
        kwargs = {}
        if spec_str.startswith("builtin:energy:"):
            for item in spec_str[len("builtin:energy:"):].split(","):
                key, _, val = item.partition("=")
                if key == "threshold":
                    kwargs["threshold"] = float(val)
                elif key == "loud":
                    kwargs["loud_label"] = val
                elif key == "quiet":
                    kwargs["quiet_label"] = val
                else:
                    raise ValueError(f"unknown energy-oracle option {key!r}")
        return EnergyOracle(labels=labels, **kwargs)
    if spec_str.startswith("builtin:linear:"):
        weights = read_linw(spec_str[len("builtin:linear:"):])
        return LinearOracle(weights, labels)
    raise ValueError(f"unknown oracle spec {spec_str!r}")
