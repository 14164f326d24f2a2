"""Model-agnostic detector boundary: wire protocol v1, transports, and caching.

Protocol v1 is one UTF-8 JSON object per line. The harness opens with
``HELLO{version, name, conf_threshold}``; the detector answers with its own
HELLO. Each ``DETECT{request_id, image_path|image_b64, width, height}`` gets
exactly one ``RESULT{request_id, detections: [...]}`` or
``ERROR{request_id, message}`` back. Images travel as shared temporary PNG
files by default (inline base64 optional).

Detectors run as subprocesses (stdio transport), remote services (HTTP
transport, same message bodies POSTed as JSON), or in-process scripted rules.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import select
import shlex
import subprocess
import tempfile
import time
import urllib.error
import urllib.request
import uuid
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .model import BoundingBox, Detection, EvalOutcome, ImageRecord, WarpError
from .scripted import ScriptedDetector

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HARNESS_NAME = "warp-harness"
DETECTOR_ENV_VAR = "WARP_DETECTOR"
MAX_RETRIES = 2


class TransportError(WarpError):
    """Detector process or service unreachable, dead, or timed out."""


class ProtocolError(WarpError):
    """Detector spoke, but not protocol v1."""


_BOX_FIELDS = {"x_min", "y_min", "x_max", "y_max", "confidence", "class"}

MESSAGE_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "HELLO"},
                "version": {"type": "integer"},
                "name": {"type": "string"},
                "conf_threshold": {"type": ["number", "null"]},
            },
            "required": ["type", "version", "name"],
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "DETECT"},
                "request_id": {"type": "string"},
                "image_path": {"type": "string"},
                "image_b64": {"type": "string"},
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
            },
            "required": ["type", "request_id", "width", "height"],
            "anyOf": [{"required": ["image_path"]}, {"required": ["image_b64"]}],
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "RESULT"},
                "request_id": {"type": "string"},
                "detections": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "x_min": {"type": "number"},
                            "y_min": {"type": "number"},
                            "x_max": {"type": "number"},
                            "y_max": {"type": "number"},
                            "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                            "class": {"type": "integer", "minimum": 1},
                        },
                        "required": sorted(_BOX_FIELDS),
                    },
                },
                "latency_ms": {"type": "number"},
            },
            "required": ["type", "request_id", "detections"],
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "ERROR"},
                "request_id": {"type": ["string", "null"]},
                "message": {"type": "string"},
            },
            "required": ["type", "message"],
        },
    ]
}


def validate_message(message: dict) -> None:
    """Raise ProtocolError unless the message matches protocol v1."""
    if not isinstance(message, dict) or message.get("type") not in (
        "HELLO",
        "DETECT",
        "RESULT",
        "ERROR",
    ):
        raise ProtocolError(f"unknown message type: {message!r}")
    try:
        jsonschema.validate(message, MESSAGE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ProtocolError(f"message fails protocol v1 schema: {e.message}") from e


def validate_transcript(messages) -> None:
    """Validate every message of a recorded transcript."""
    for i, msg in enumerate(messages):
        entry = msg[1] if isinstance(msg, tuple) else msg
        try:
            validate_message(entry)
        except ProtocolError as e:
            raise ProtocolError(f"transcript entry {i}: {e}") from e


@dataclass
class DetectorHandle:
    """Transport descriptor plus the metadata learned during the handshake."""

    transport: str
    protocol_version: int = PROTOCOL_VERSION
    name: str | None = None
    conf_threshold: float | None = None
    timeout: float = 30.0


class _LineChannel:
    """Newline-delimited reads from a pipe fd with a deadline."""

    def __init__(self, stream):
        self._stream = stream
        self._buf = bytearray()

    def readline(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        fd = self._stream.fileno()
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[: nl + 1])
                del self._buf[: nl + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TransportError(f"timed out after {timeout}s waiting for detector output")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise TransportError(f"timed out after {timeout}s waiting for detector output")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise TransportError("detector closed its output stream")
            self._buf.extend(chunk)


class SubprocessTransport:
    """Runs the detector as a child process, one JSON message per line."""

    def __init__(self, command: str, timeout: float = 30.0):
        self.command = command
        self.timeout = timeout
        self._proc = None
        self._channel = None

    def start(self) -> None:
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,
            )
        except OSError as e:
            raise TransportError(f"cannot start detector {self.command!r}: {e}") from e
        self._channel = _LineChannel(self._proc.stdout)

    def send(self, message: dict) -> None:
        self.start()
        if self._proc.poll() is not None:
            raise TransportError(
                f"detector process exited with code {self._proc.returncode}"
            )
        line = json.dumps(message, sort_keys=True) + "\n"
        try:
            self._proc.stdin.write(line.encode("utf-8"))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(f"detector pipe broken: {e}") from e

    def recv(self) -> dict:
        line = self._channel.readline(self.timeout)
        try:
            return json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            log.error("malformed detector payload: %r", line)
            raise ProtocolError(f"detector sent a non-JSON line: {line!r}") from e

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        self._channel = None


class HTTPTransport:
    """POSTs each protocol message as JSON and reads the JSON reply."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def start(self) -> None:
        pass

    def exchange(self, message: dict) -> dict:
        req = urllib.request.Request(
            self.url,
            data=json.dumps(message, sort_keys=True).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, OSError) as e:
            raise TransportError(f"detector service {self.url} unreachable: {e}") from e
        try:
            return json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            log.error("malformed detector payload: %r", body)
            raise ProtocolError(f"detector sent non-JSON body: {body!r}") from e

    def close(self) -> None:
        pass


def _encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_digest(image: ImageRecord) -> str:
    h = hashlib.sha256()
    h.update(f"{image.width}x{image.height}".encode())
    h.update(np.ascontiguousarray(image.pixels).tobytes())
    return h.hexdigest()


def _clip_detections(detections, width: int, height: int) -> tuple[Detection, ...]:
    """Clip boxes to image bounds; boxes entirely outside are dropped."""
    out = []
    for det in detections:
        clipped = det.box.clip(width, height)
        if clipped is None:
            log.warning("dropping detection entirely outside image bounds: %s", det)
            continue
        out.append(Detection(clipped, det.confidence, det.class_label))
    return tuple(out)


class DetectorClient:
    """One detector endpoint; holds at most one in-flight request.

    Construct via :meth:`scripted`, :meth:`from_spec`, or directly with a
    transport object. ``transcript`` collects (direction, message) pairs when
    recording is enabled.
    """

    def __init__(self, handle: DetectorHandle, transport=None, scripted=None,
                 record_transcript: bool = False, image_transfer: str = "file"):
        if image_transfer not in ("file", "b64"):
            raise ValueError(f"unknown image transfer mode: {image_transfer}")
        self.handle = handle
        self._transport = transport
        self._scripted = scripted
        self._greeted = scripted is not None
        self._tmpdir = None
        self.image_transfer = image_transfer
        self.record_transcript = record_transcript
        self.transcript: list[tuple[str, dict]] = []

    @property
    def is_scripted(self) -> bool:
        return self._scripted is not None

    def flush_transcript(self, path) -> None:
        """Write the recorded transcript as JSON lines."""
        with open(path, "w", encoding="utf-8") as f:
            for direction, message in self.transcript:
                f.write(
                    json.dumps({"direction": direction, "message": message},
                               sort_keys=True)
                    + "\n"
                )

    @classmethod
    def scripted(cls, detector: ScriptedDetector, record_transcript: bool = False
                 ) -> "DetectorClient":
        handle = DetectorHandle(
            transport=f"scripted:{detector.name}",
            name=detector.name,
            conf_threshold=detector.conf_threshold,
        )
        return cls(handle, scripted=detector, record_transcript=record_transcript)

    @classmethod
    def from_spec(cls, spec: str, timeout: float = 30.0,
                  record_transcript: bool = False) -> "DetectorClient":
        """Build a client from a descriptor string.

        ``scripted:<rules.json>`` loads in-process rules; ``http(s)://...``
        uses the HTTP transport; anything else is a subprocess command line.
        """
        if spec.startswith("scripted:"):
            return cls.scripted(
                ScriptedDetector.from_json_file(spec[len("scripted:"):]),
                record_transcript=record_transcript,
            )
        handle = DetectorHandle(transport=spec, timeout=timeout)
        if spec.startswith(("http://", "https://")):
            transport = HTTPTransport(spec, timeout)
        else:
            transport = SubprocessTransport(spec, timeout)
        return cls(handle, transport=transport, record_transcript=record_transcript)

    # -- protocol ------------------------------------------------------------

    def _note(self, direction: str, message: dict) -> None:
        if self.record_transcript:
            self.transcript.append((direction, message))

    def _exchange(self, message: dict) -> dict:
        validate_message(message)
        self._note("send", message)
        if isinstance(self._transport, HTTPTransport):
            reply = self._transport.exchange(message)
        else:
            self._transport.send(message)
            reply = self._transport.recv()
        self._note("recv", reply)
        validate_message(reply)
        return reply

    def handshake(self) -> DetectorHandle:
        """Exchange HELLOs; populates detector name and confidence threshold."""
        if self._scripted is not None:
            return self.handle
        if self._transport is None:
            raise TransportError("client has no transport")
        self._transport.start()
        reply = self._exchange(
            {
                "type": "HELLO",
                "version": PROTOCOL_VERSION,
                "name": HARNESS_NAME,
                "conf_threshold": None,
            }
        )
        if reply["type"] == "ERROR":
            raise ProtocolError(f"detector refused handshake: {reply['message']}")
        if reply["type"] != "HELLO":
            raise ProtocolError(f"expected HELLO reply, got {reply['type']}")
        if reply["version"] != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: harness speaks {PROTOCOL_VERSION}, "
                f"detector speaks {reply['version']}"
            )
        self.handle.name = reply["name"]
        self.handle.conf_threshold = reply.get("conf_threshold")
        self._greeted = True
        return self.handle

    def _image_payload(self, image: ImageRecord) -> dict:
        png = _encode_png(image.pixels)
        if self.image_transfer == "b64":
            return {"image_b64": base64.b64encode(png).decode("ascii")}
        if self._tmpdir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="warp-gw-")
        path = Path(self._tmpdir.name) / f"{uuid.uuid4().hex}.png"
        path.write_bytes(png)
        return {"image_path": str(path)}

    def detect(self, image: ImageRecord) -> EvalOutcome:
        """Run one detection; boxes come back clipped to image bounds."""
        if self._scripted is not None:
            detections = _clip_detections(
                self._scripted.detect_pixels(image.pixels), image.width, image.height
            )
            return EvalOutcome.from_detections(image.image_id, detections)

        if not self._greeted:
            self.handshake()

        last_error: Exception | None = None
        for _ in range(1 + MAX_RETRIES):
            request_id = uuid.uuid4().hex
            payload = {
                "type": "DETECT",
                "request_id": request_id,
                "width": image.width,
                "height": image.height,
            }
            body = self._image_payload(image)
            payload.update(body)
            try:
                reply = self._exchange(payload)
                if reply["type"] == "ERROR":
                    raise ProtocolError(f"detector error: {reply.get('message')}")
                if reply["type"] != "RESULT":
                    raise ProtocolError(f"expected RESULT, got {reply['type']}")
                if reply["request_id"] != request_id:
                    raise ProtocolError(
                        f"request id mismatch: sent {request_id}, "
                        f"got {reply['request_id']}"
                    )
                detections = tuple(
                    Detection(
                        BoundingBox(d["x_min"], d["y_min"], d["x_max"], d["y_max"]),
                        d["confidence"],
                        d["class"],
                    )
                    for d in reply["detections"]
                )
                detections = _clip_detections(detections, image.width, image.height)
                return EvalOutcome.from_detections(image.image_id, detections)
            except TransportError as e:
                last_error = e
                log.warning("transport failure, retrying with fresh request id: %s", e)
                continue
            finally:
                if "image_path" in body:
                    Path(body["image_path"]).unlink(missing_ok=True)
        raise TransportError(
            f"detector failed after {1 + MAX_RETRIES} attempts: {last_error}"
        )

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- outcome (de)serialization and the response cache --------------------------

def outcome_to_dict(outcome: EvalOutcome) -> dict:
    return {
        "image_id": outcome.image_id,
        "original_class": outcome.original_class,
        "detections": [
            {
                "x_min": d.box.x_min,
                "y_min": d.box.y_min,
                "x_max": d.box.x_max,
                "y_max": d.box.y_max,
                "confidence": d.confidence,
                "class": d.class_label,
            }
            for d in outcome.detections
        ],
    }


def outcome_from_dict(raw: dict) -> EvalOutcome:
    detections = tuple(
        Detection(
            BoundingBox(d["x_min"], d["y_min"], d["x_max"], d["y_max"]),
            d["confidence"],
            d["class"],
        )
        for d in raw["detections"]
    )
    return EvalOutcome(raw["image_id"], raw["original_class"], detections)


class ResponseCache:
    """Detection responses keyed by (detector name, image content digest).

    In-memory always; optionally backed by a directory of JSON files so
    resumed runs skip transport calls. Corrupt entries degrade to misses.
    """

    def __init__(self, directory=None):
        self._mem: dict[tuple[str, str], EvalOutcome] = {}
        self._dir = Path(directory) if directory is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _path(self, key: tuple[str, str]) -> Path:
        safe = hashlib.sha256(key[0].encode()).hexdigest()[:16]
        return self._dir / safe / f"{key[1]}.json"

    def get(self, detector_name: str, digest: str) -> EvalOutcome | None:
        key = (detector_name, digest)
        if key in self._mem:
            self.hits += 1
            return self._mem[key]
        if self._dir is not None:
            path = self._path(key)
            if path.is_file():
                try:
                    outcome = outcome_from_dict(json.loads(path.read_text()))
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    log.warning("corrupt cache entry %s treated as miss: %s", path, e)
                else:
                    self._mem[key] = outcome
                    self.hits += 1
                    return outcome
        self.misses += 1
        return None

    def put(self, detector_name: str, digest: str, outcome: EvalOutcome) -> None:
        key = (detector_name, digest)
        self._mem[key] = outcome
        if self._dir is not None:
            path = self._path(key)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(outcome_to_dict(outcome), sort_keys=True))
            tmp.replace(path)


def cached_detect(client: DetectorClient, image: ImageRecord,
                  cache: ResponseCache) -> EvalOutcome:
    """detect() with response caching; a hit makes no transport call."""
    name = client.handle.name or client.handle.transport
    digest = image_digest(image)
    hit = cache.get(name, digest)
    if hit is not None:
        return EvalOutcome(image.image_id, hit.original_class, hit.detections)
    outcome = client.detect(image)
    cache.put(name, digest, outcome)
    return outcome
