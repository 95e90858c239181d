"""ORC1 server: newline-delimited JSON over stdio or TCP.

Each connection is served sequentially: handshake `{"hello": "ORC1"}` is
answered with the model's labels, inference records `{id, h, w, data}`
with `{id, probs}`. A bad request gets `{id?, error}` and the connection
stays open. Inference runs in eval mode, so identical requests always get
identical replies.
"""

import json
import math
import socketserver
import sys

import numpy as np
import torch

from .model import ModelBundle


def _error(message: str, request_id=None) -> dict:
    reply = {"error": message}
    if request_id is not None:
        reply["id"] = request_id
    return reply


def handle_request(bundle: ModelBundle, line: str) -> dict:
    """One protocol line in, one reply object out. Never raises."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        return _error(f"malformed JSON: {exc}")
    if not isinstance(record, dict):
        return _error("request must be a JSON object")

    if "hello" in record:
        if record["hello"] != "ORC1":
            return _error(f"unknown protocol {record['hello']!r}")
        return {"labels": list(bundle.labels)}

    request_id = record.get("id")
    if not isinstance(request_id, str):
        return _error("request needs a string 'id'")
    try:
        h, w = int(record["h"]), int(record["w"])
        data = record["data"]
    except (KeyError, TypeError, ValueError):
        return _error("request needs integer 'h'/'w' and a 'data' list",
                      request_id)
    if not isinstance(data, list) or len(data) != h * w:
        return _error(f"'data' must hold h*w = {h * w} values", request_id)
    try:
        values = [float(v) for v in data]
    except (TypeError, ValueError):
        return _error("'data' must be numeric", request_id)
    if not all(math.isfinite(v) for v in values):
        return _error("'data' must be finite", request_id)
    try:
        bundle.check_dims(h, w)
    except ValueError as exc:
        return _error(str(exc), request_id)

    matrix = torch.as_tensor(np.array(values, dtype=np.float64)
                             .reshape(h, w), dtype=torch.float32)
    probs = bundle.probabilities(matrix)
    return {"id": request_id, "probs": [float(p) for p in probs]}


def serve_stdio(bundle: ModelBundle) -> None:
    for line in sys.stdin:
        if not line.strip():
            continue
        sys.stdout.write(json.dumps(handle_request(bundle, line)) + "\n")
        sys.stdout.flush()


class _Orc1Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            reply = json.dumps(handle_request(self.server.bundle, line))
            self.wfile.write(reply.encode("utf-8") + b"\n")
            self.wfile.flush()


class Orc1TcpServer(socketserver.ThreadingTCPServer):
    """One thread per connection; requests within one are sequential."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, bundle: ModelBundle, host: str, port: int):
        super().__init__((host, port), _Orc1Handler)
        self.bundle = bundle


def serve_tcp(bundle: ModelBundle, host: str, port: int) -> None:
    with Orc1TcpServer(bundle, host, port) as server:
        server.serve_forever()
