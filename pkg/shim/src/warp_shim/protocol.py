"""Wire protocol v1: one JSON object per line, UTF-8.

Message kinds: HELLO{version, name, conf_threshold}, DETECT{request_id,
image_path|image_b64, width, height}, RESULT{request_id, detections},
ERROR{request_id, message}. The schema below is what the adapter implements
and what its conformance tests validate transcripts against.
"""

from __future__ import annotations

import jsonschema

PROTOCOL_VERSION = 1

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
                        "required": [
                            "class", "confidence", "x_max", "x_min", "y_max", "y_min",
                        ],
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


def validate_message(message) -> None:
    """jsonschema.ValidationError when the message breaks protocol v1."""
    jsonschema.validate(message, MESSAGE_SCHEMA)


def validate_transcript(messages) -> int:
    """Validate a full transcript; returns the number of messages checked."""
    count = 0
    for entry in messages:
        message = entry.get("message", entry) if isinstance(entry, dict) else entry
        validate_message(message)
        count += 1
    return count
