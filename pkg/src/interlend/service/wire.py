"""Inter-node message envelope.

JSON-over-HTTP with four kinds that preserve the requesting/supplying
agency split of standard ILL transactions, so an XML binding would be a
serializer swap. Message ids are globally unique and replays are
acknowledged identically without re-applying state.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import SchemaViolation

KINDS = ("REQUEST", "REQUEST_CONFIRMATION", "SUPPLYING_STATUS",
         "REQUESTING_ACTION")

_REQUIRED = ("message_id", "correlation", "kind", "sender", "recipient",
             "payload", "sent_at")


@dataclass(frozen=True)
class WireMessage:
    message_id: str
    correlation: str  # request id the message is about
    kind: str
    sender: str
    recipient: str
    payload: dict
    sent_at: str  # ISO timestamp string; envelope metadata, not a clock

    def to_dict(self) -> dict:
        return {
            "message_id": self.message_id,
            "correlation": self.correlation,
            "kind": self.kind,
            "sender": self.sender,
            "recipient": self.recipient,
            "payload": self.payload,
            "sent_at": self.sent_at,
        }

    @classmethod
    def from_dict(cls, data) -> "WireMessage":
        if not isinstance(data, dict):
            raise SchemaViolation("wire message must be an object")
        missing = [key for key in _REQUIRED if key not in data]
        if missing:
            raise SchemaViolation(f"missing fields: {', '.join(missing)}")
        if data["kind"] not in KINDS:
            raise SchemaViolation(f"unknown kind {data['kind']!r}")
        if not isinstance(data["payload"], dict):
            raise SchemaViolation("payload must be an object")
        for key in ("message_id", "correlation", "sender", "recipient", "sent_at"):
            if not isinstance(data[key], str) or not data[key]:
                raise SchemaViolation(f"{key} must be a non-empty string")
        return cls(**{key: data[key] for key in _REQUIRED})
