"""Protocol v1 endpoint: stdio loop by default, HTTP when a port is given.

One request in flight per process; parallel sweeps launch several shim
processes. Every DETECT gets exactly one RESULT or ERROR.
"""

from __future__ import annotations

import base64
import io
import json
import sys
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
from PIL import Image

from .protocol import PROTOCOL_VERSION
from .stub import StubModel


def _load_pixels(message: dict) -> np.ndarray:
    if "image_path" in message:
        with Image.open(message["image_path"]) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    data = base64.b64decode(message["image_b64"])
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def handle_message(model: StubModel, message: dict) -> dict:
    """One protocol reply per incoming message."""
    kind = message.get("type")
    if kind == "HELLO":
        if message.get("version") != PROTOCOL_VERSION:
            return {
                "type": "ERROR",
                "request_id": None,
                "message": f"unsupported protocol version {message.get('version')}; "
                           f"this adapter speaks {PROTOCOL_VERSION}",
            }
        return {
            "type": "HELLO",
            "version": PROTOCOL_VERSION,
            "name": model.name,
            "conf_threshold": model.conf_threshold,
        }
    if kind == "DETECT":
        request_id = message.get("request_id")
        if not isinstance(request_id, str) or (
            "image_path" not in message and "image_b64" not in message
        ):
            return {
                "type": "ERROR",
                "request_id": request_id if isinstance(request_id, str) else None,
                "message": "malformed DETECT: need request_id and image_path|image_b64",
            }
        started = time.perf_counter()
        try:
            pixels = _load_pixels(message)
            detections = model.detect(pixels)
        except Exception as e:  # noqa: BLE001 - report decode/model errors to client
            return {"type": "ERROR", "request_id": request_id, "message": str(e)}
        return {
            "type": "RESULT",
            "request_id": request_id,
            "detections": detections,
            "latency_ms": (time.perf_counter() - started) * 1000.0,
        }
    return {
        "type": "ERROR",
        "request_id": None,
        "message": f"unsupported message type: {kind!r}",
    }


def serve_stdio(model: StubModel, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError as e:
            reply = {"type": "ERROR", "request_id": None,
                     "message": f"not JSON: {e}"}
        else:
            reply = handle_message(model, message)
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return 0


def serve_http(model: StubModel, port: int, ready_callback=None) -> int:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802 - http.server API
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            try:
                message = json.loads(body.decode("utf-8"))
                reply = handle_message(model, message)
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                reply = {"type": "ERROR", "request_id": None,
                         "message": f"not JSON: {e}"}
            payload = json.dumps(reply).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):  # quiet
            pass

    server = HTTPServer(("127.0.0.1", port), Handler)
    if ready_callback is not None:
        ready_callback(server)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0
