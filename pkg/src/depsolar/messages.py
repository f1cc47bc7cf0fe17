"""Protocol message values exchanged between controllers and plants."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class MessageKind(str, Enum):
    HEARTBEAT = "HEARTBEAT"
    PERF_VARS = "PERF_VARS"
    CONTROL = "CONTROL"
    SENSOR = "SENSOR"
    TOKEN_RELEASE = "TOKEN_RELEASE"
    TOKEN_CLAIM = "TOKEN_CLAIM"
    RESOURCE_HANDOFF = "RESOURCE_HANDOFF"


@dataclass(frozen=True)
class ProtocolMessage:
    kind: MessageKind
    sender: int
    epoch: int
    seq: int
    sent_at: float
    body: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", MessageKind(self.kind))


class SeqFilter:
    """Receiver-side filter: accepts each (sender, kind) seq at most once, in increasing order."""

    def __init__(self):
        self._last: dict[tuple[int, MessageKind], int] = {}
        self.dropped = 0

    def accept(self, msg: ProtocolMessage) -> bool:
        key = (msg.sender, msg.kind)
        if msg.seq <= self._last.get(key, -1):
            self.dropped += 1
            return False
        self._last[key] = msg.seq
        return True

    def reset(self) -> None:
        self._last.clear()
