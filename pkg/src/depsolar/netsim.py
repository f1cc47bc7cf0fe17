"""Deterministic discrete-event network with latency, jitter and loss.

Time is in milliseconds. All randomness comes from one seeded numpy
``Generator`` owned by the queue, so a delivery schedule is a pure function
of the seed and the sequence of ``send`` calls.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .messages import ProtocolMessage

# Underlying location of the truncated-normal jitter chosen so that the
# truncated distribution on [0, 80] with scale 15 has mean 15 ms.
DEFAULT_JITTER_LOC = 7.216001549327167


class RoutingError(KeyError):
    pass


@dataclass(frozen=True)
class JitterDist:
    kind: str = "truncated-normal"
    params: dict = field(default_factory=lambda: {
        "loc": DEFAULT_JITTER_LOC, "scale": 15.0, "low": 0.0, "high": 80.0})

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated-normal"):
            raise ValueError(f"unknown jitter kind {self.kind!r}")
        p = self.params
        if self.kind == "uniform":
            if set(p) != {"low", "high"} or p["low"] > p["high"]:
                raise ValueError("uniform jitter needs low <= high")
        else:
            if set(p) != {"loc", "scale", "low", "high"}:
                raise ValueError("truncated-normal jitter needs loc, scale, low, high")
            if p["scale"] < 0 or p["low"] > p["high"]:
                raise ValueError("truncated-normal jitter needs scale >= 0 and low <= high")


@dataclass(frozen=True)
class LinkProfile:
    base_latency_ms: float = 40.0
    jitter_dist: JitterDist = field(default_factory=JitterDist)
    loss_prob: float = 0.0
    reliable: bool = True
    # probability that a reliable send also produces a late duplicate copy
    dup_prob: float = 0.0

    def __post_init__(self):
        if self.base_latency_ms < 0:
            raise ValueError("base latency must be nonnegative")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if not 0.0 <= self.dup_prob <= 1.0:
            raise ValueError("dup_prob must lie in [0, 1]")

    @classmethod
    def fixed(cls, latency_ms: float, **kw) -> "LinkProfile":
        return cls(latency_ms, JitterDist("uniform", {"low": 0.0, "high": 0.0}), **kw)


def _jitter(dist: JitterDist, rng: np.random.Generator) -> float:
    p = dist.params
    lo, hi = p["low"], p["high"]
    if dist.kind == "uniform":
        return lo if lo == hi else float(rng.uniform(lo, hi))
    if p["scale"] == 0 or lo == hi:
        return float(min(max(p["loc"], lo), hi))
    # inverse-CDF draw: one uniform per sample however narrow the window
    nd = NormalDist(p["loc"], p["scale"])
    a, b = nd.cdf(lo), nd.cdf(hi)
    u = a + (b - a) * float(rng.random())
    if not 0.0 < u < 1.0 or a == b:
        return float(lo if p["loc"] < lo else hi)
    return float(min(max(nd.inv_cdf(u), lo), hi))


def sample_latency(profile: LinkProfile, rng: np.random.Generator) -> float:
    return max(0.0, profile.base_latency_ms + _jitter(profile.jitter_dist, rng))


@dataclass(frozen=True)
class Envelope:
    msg: ProtocolMessage
    src: int
    dst: int
    send_time: float
    deliver_time: float
    seq: int = 0

    @property
    def latency(self) -> float:
        return self.deliver_time - self.send_time


@dataclass
class NetStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    retransmits: int = 0
    duplicates: int = 0


class EventQueue:
    """Time-ordered pending deliveries; ties pop by (deliver_time, seq, src)."""

    def __init__(self, rng_seed: int = 0, nodes=(), profile: LinkProfile | None = None):
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)
        self.now = 0.0
        self.nodes: set[int] = set(nodes)
        self.default_profile = profile or LinkProfile()
        self.links: dict[tuple[int, int], LinkProfile] = {}
        self.stats = NetStats()
        self._heap: list[tuple[float, int, int, Envelope]] = []
        self._seq = 0
        self._fifo: dict[tuple[int, int], float] = {}

    def __len__(self) -> int:
        return len(self._heap)

    def add_node(self, node_id: int) -> None:
        self.nodes.add(node_id)

    def set_link(self, src: int, dst: int, profile: LinkProfile) -> None:
        self.links[(src, dst)] = profile

    def profile_for(self, src: int, dst: int) -> LinkProfile:
        return self.links.get((src, dst), self.default_profile)

    def next_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def _push(self, env: Envelope) -> None:
        heapq.heappush(self._heap, (env.deliver_time, env.seq, env.src, env))

    def send(self, msg: ProtocolMessage, src: int, dst: int,
             profile: LinkProfile | None = None) -> Envelope | None:
        """Schedule ``msg`` for delivery; returns the envelope or None if lost."""
        if dst not in self.nodes:
            raise RoutingError(f"unknown destination {dst}")
        profile = profile or self.profile_for(src, dst)
        self.stats.sent += 1
        self._seq += 1
        seq = self._seq
        latency = sample_latency(profile, self.rng)
        if profile.reliable:
            if profile.loss_prob >= 1.0:
                self.stats.dropped += 1
                return None
            retries = int(self.rng.geometric(1.0 - profile.loss_prob)) - 1 if profile.loss_prob > 0 else 0
            self.stats.retransmits += retries
            deliver = self.now + latency * (1 + retries)
            # in-order delivery per directed link
            deliver = max(deliver, self._fifo.get((src, dst), deliver))
            self._fifo[(src, dst)] = deliver
            env = Envelope(msg, src, dst, self.now, deliver, seq)
            self._push(env)
            if profile.dup_prob > 0 and self.rng.random() < profile.dup_prob:
                self._seq += 1
                self.stats.duplicates += 1
                late = deliver + sample_latency(profile, self.rng)
                self._push(Envelope(msg, src, dst, self.now, late, self._seq))
            return env
        if profile.loss_prob > 0 and self.rng.random() < profile.loss_prob:
            self.stats.dropped += 1
            return None
        env = Envelope(msg, src, dst, self.now, self.now + latency, seq)
        self._push(env)
        return env

    def advance(self, until: float) -> list[Envelope]:
        if until < self.now:
            raise ValueError(f"cannot advance backwards from {self.now} to {until}")
        out = []
        while self._heap and self._heap[0][0] <= until:
            out.append(heapq.heappop(self._heap)[3])
        self.stats.delivered += len(out)
        self.now = until
        return out

    def drop_pending(self, pred) -> int:
        """Remove in-flight envelopes matching ``pred`` (used for partitions)."""
        keep = [item for item in self._heap if not pred(item[3])]
        n = len(self._heap) - len(keep)
        if n:
            heapq.heapify(keep)
            self._heap = keep
            self.stats.dropped += n
        return n


def send(q: EventQueue, msg: ProtocolMessage, src: int, dst: int,
         profile: LinkProfile | None = None) -> EventQueue:
    q.send(msg, src, dst, profile)
    return q


def advance(q: EventQueue, until: float) -> tuple[EventQueue, list[Envelope]]:
    return q, q.advance(until)
