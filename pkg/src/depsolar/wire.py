"""Length-prefixed frame codec for protocol messages.

Frame layout: 4-byte big-endian unsigned payload length, then a UTF-8 JSON
object whose keys are the message fields with the body flattened under a
``body.`` prefix.
"""

from __future__ import annotations

import json
import struct

from .messages import MessageKind, ProtocolMessage

MAX_FRAME = 65536
_HEADER = struct.Struct(">I")
_BODY = "body."


class ProtocolError(ValueError):
    pass


class IncompleteFrame(ProtocolError):
    """Not enough bytes yet; the caller should read more and retry."""


class OversizeFrame(ProtocolError):
    pass


class UnknownKind(ProtocolError):
    pass


def _check_value(key, value):
    if isinstance(value, (list, tuple)):
        for v in value:
            if not isinstance(v, (int, float, str, bool)) and v is not None:
                raise ValueError(f"body[{key!r}] must be a flat list of scalars")
        return list(value)
    if isinstance(value, (int, float, str, bool)) or value is None:
        return value
    raise ValueError(f"body[{key!r}] has unsupported type {type(value).__name__}")


def encode_frame(msg: ProtocolMessage) -> bytes:
    for name in ("sender", "epoch", "seq"):
        v = getattr(msg, name)
        if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v < 2**63:
            raise ValueError(f"{name} must be a nonnegative 63-bit integer, got {v!r}")
    flat = {"kind": msg.kind.value, "sender": msg.sender, "epoch": msg.epoch,
            "seq": msg.seq, "sent_at": msg.sent_at}
    for key, value in msg.body.items():
        flat[_BODY + str(key)] = _check_value(key, value)
    payload = json.dumps(flat, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise OversizeFrame(f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(payload)) + payload


def _frame_length(data: bytes) -> int:
    if len(data) < _HEADER.size:
        raise IncompleteFrame(f"need {_HEADER.size} header bytes, have {len(data)}")
    (length,) = _HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise OversizeFrame(f"declared length {length} exceeds {MAX_FRAME}")
    if len(data) < _HEADER.size + length:
        raise IncompleteFrame(f"need {length} payload bytes, have {len(data) - _HEADER.size}")
    return length


def _decode_payload(payload: bytes) -> ProtocolMessage:
    try:
        flat = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed payload: {exc}") from exc
    if not isinstance(flat, dict):
        raise ProtocolError("payload is not an object")
    try:
        kind = MessageKind(flat.pop("kind"))
    except KeyError as exc:
        raise ProtocolError("payload has no kind") from exc
    except ValueError as exc:
        raise UnknownKind(str(exc)) from exc
    try:
        head = {k: flat.pop(k) for k in ("sender", "epoch", "seq", "sent_at")}
    except KeyError as exc:
        raise ProtocolError(f"missing field {exc}") from exc
    body = {}
    for key, value in flat.items():
        if not key.startswith(_BODY):
            raise ProtocolError(f"unexpected field {key!r}")
        body[key[len(_BODY):]] = value
    return ProtocolMessage(kind, body=body, **head)


def decode_frame(data: bytes) -> ProtocolMessage:
    length = _frame_length(data)
    return _decode_payload(bytes(data[_HEADER.size:_HEADER.size + length]))


class FrameDecoder:
    """Incremental decoder for a byte stream; unknown kinds are dropped and counted."""

    def __init__(self):
        self._buf = bytearray()
        self.unknown = 0

    def feed(self, data: bytes) -> list[ProtocolMessage]:
        self._buf.extend(data)
        out = []
        while True:
            try:
                length = _frame_length(self._buf)
            except IncompleteFrame:
                return out
            end = _HEADER.size + length
            payload = bytes(self._buf[_HEADER.size:end])
            del self._buf[:end]
            try:
                out.append(_decode_payload(payload))
            except UnknownKind:
                self.unknown += 1
