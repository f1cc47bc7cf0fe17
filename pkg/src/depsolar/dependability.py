"""Duty/standby redundancy protocol for networked tracker control.

Every controller runs the MPC for each plant it is assigned to. For a given
plant exactly one controller is DUTY and sends CONTROL; the others are
STANDBY, replicate the duty's performance variables and stay silent until
one of four switchover events fires. A standby then broadcasts a
TOKEN_CLAIM for the next epoch; after a claim window with no better claim
(earlier timestamp, then lower node id) it becomes DUTY.

Plants accept CONTROL only through a :class:`PlantGateway`, which admits
the highest epoch seen and locks each epoch to its first sender.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .dissipativity import DissipativityMonitor, SupplyRateParams
from .messages import MessageKind, ProtocolMessage, SeqFilter
from .mpc import MpcConfig, MpcController
from .plant import StateSpaceModel

BROADCAST = None


class Role(str, Enum):
    DUTY = "DUTY"
    STANDBY = "STANDBY"
    FAILED = "FAILED"


class SwitchoverEvent(str, Enum):
    RESOURCE_EXHAUSTED = "RESOURCE_EXHAUSTED"
    HARDWARE_FAILURE_TOKEN = "HARDWARE_FAILURE_TOKEN"
    COMM_TIMEOUT = "COMM_TIMEOUT"
    NO_STATE_BROADCAST = "NO_STATE_BROADCAST"


class ProtocolViolation(RuntimeError):
    pass


class StaleStateError(ValueError):
    pass


class CapacityError(ValueError):
    pass


def _floats(v) -> list[float]:
    return np.asarray(v, dtype=float).reshape(-1).tolist()


@dataclass
class PerfVars:
    plant_id: int
    setpoint: np.ndarray
    x_last: np.ndarray
    x_prev: np.ndarray
    u_last: np.ndarray
    u_prev: np.ndarray
    y_last: np.ndarray
    psi_last: float
    step_index: int

    def __post_init__(self):
        if self.step_index < 0:
            raise ValueError("step_index must be nonnegative")
        for name in ("setpoint", "x_last", "x_prev", "u_last", "u_prev", "y_last"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, PerfVars):
            return NotImplemented
        return self.to_body() == other.to_body()

    def to_body(self) -> dict[str, Any]:
        return {
            "plant_id": self.plant_id,
            "setpoint": _floats(self.setpoint),
            "x_last": _floats(self.x_last),
            "x_prev": _floats(self.x_prev),
            "u_last": _floats(self.u_last),
            "u_prev": _floats(self.u_prev),
            "y_last": _floats(self.y_last),
            "psi_last": float(self.psi_last),
            "step_index": int(self.step_index),
        }

    @classmethod
    def from_body(cls, body: dict[str, Any]) -> "PerfVars":
        return cls(**{k: body[k] for k in (
            "plant_id", "setpoint", "x_last", "x_prev", "u_last", "u_prev",
            "y_last", "psi_last", "step_index")})


@dataclass
class SensorSample:
    step: int
    x: np.ndarray
    y: np.ndarray
    ref: np.ndarray
    sent_at: float


@dataclass
class PlantView:
    """What one controller knows and does about one plant."""

    role: Role
    epoch: int
    controller: MpcController
    monitor: DissipativityMonitor
    claim_key: tuple[float, int] | None = None  # key under which the current duty won
    last_seen_duty: float = 0.0
    last_seen_perf: float = 0.0
    replicated_state: PerfVars | None = None
    sensor: SensorSample | None = None
    handled_step: int = -1
    pending_claim: tuple[int, float] | None = None  # (proposed epoch, claim time)
    best_claims: dict[int, tuple[float, int]] = field(default_factory=dict)
    handoff_seen: bool = False
    release_seen: bool = False
    handoff_sent: bool = False
    setpoint: np.ndarray | None = None
    u_last: np.ndarray | None = None
    u_prev: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    u_shadow: np.ndarray | None = None
    psi_last: float = 0.0
    monitor_step: int = -1
    claim_fresh: bool = False


@dataclass
class ProtocolEvent:
    t: float
    node: int
    plant: int
    kind: str
    epoch: int
    detail: str = "-"


class ControllerNode:
    """One redundant controller. ``tick`` is its only mutator during a run."""

    def __init__(self, node_id: int, model: StateSpaceModel, mpc_cfg: MpcConfig,
                 supply: SupplyRateParams, plant_addr: dict[int, int],
                 duty_plants=(), peers=(), heartbeat_interval: float = 100.0,
                 timeout: float = 1000.0, claim_window: float = 150.0,
                 cpu_budget: float | None = None):
        self.node_id = node_id
        self.model = model
        self.mpc_cfg = mpc_cfg
        self.supply = supply
        self.plant_addr = dict(plant_addr)
        self.peers = sorted(p for p in peers if p != node_id)
        self.heartbeat_interval = float(heartbeat_interval)
        self.timeout = float(timeout)
        self.claim_window = float(claim_window)
        self.cpu_budget = cpu_budget
        self.failed = False
        self.mute_perf = False
        self.filter = SeqFilter()
        self.malformed = 0
        self.events: list[ProtocolEvent] = []
        self.load = 0
        self._seq: dict[MessageKind, int] = {}
        self._force_heartbeat = False
        self.next_heartbeat = 0.0
        self.plants: dict[int, PlantView] = {}
        for pid in sorted(self.plant_addr):
            duty = pid in duty_plants
            self.plants[pid] = PlantView(
                role=Role.DUTY if duty else Role.STANDBY,
                epoch=1,
                controller=MpcController(model, mpc_cfg),
                monitor=DissipativityMonitor(supply),
                claim_key=(0.0, node_id) if duty else None,
            )

    # -- summary views -------------------------------------------------
    @property
    def role(self) -> Role:
        if self.failed:
            return Role.FAILED
        if any(pv.role is Role.DUTY for pv in self.plants.values()):
            return Role.DUTY
        return Role.STANDBY

    @property
    def epoch(self) -> int:
        return max((pv.epoch for pv in self.plants.values()), default=0)

    @property
    def assigned_plants(self) -> set[int]:
        return set(self.plants)

    def duty_plants(self) -> list[int]:
        return [pid for pid, pv in self.plants.items() if pv.role is Role.DUTY]

    def role_for(self, plant_id: int) -> Role:
        return Role.FAILED if self.failed else self.plants[plant_id].role

    # -- helpers --------------------------------------------------------
    def _msg(self, kind: MessageKind, epoch: int, now: float, body: dict) -> ProtocolMessage:
        seq = self._seq.get(kind, 0) + 1
        self._seq[kind] = seq
        return ProtocolMessage(kind, self.node_id, int(epoch), seq, float(now), body)

    def _log(self, now, plant, kind, epoch, detail="-"):
        self.events.append(ProtocolEvent(float(now), self.node_id, plant, kind, int(epoch), detail))

    def _demote(self, pv: PlantView, pid: int, epoch: int, now: float, why: str) -> None:
        if pv.role is Role.DUTY:
            self._log(now, pid, "duty_released", pv.epoch, why)
        pv.role = Role.STANDBY
        pv.epoch = max(pv.epoch, epoch)
        pv.pending_claim = None
        pv.claim_key = None
        pv.handoff_seen = pv.release_seen = pv.handoff_sent = False

    def next_wakeup(self) -> float:
        """Earliest time at which this node has timed work to do."""
        if self.failed:
            return math.inf
        times = []
        if self.duty_plants():
            times.append(self.next_heartbeat)
        for pv in self.plants.values():
            if pv.role is Role.STANDBY:
                if pv.pending_claim is not None:
                    times.append(pv.pending_claim[1] + self.claim_window)
                else:
                    times.append(pv.last_seen_duty + self.timeout)
                    times.append(pv.last_seen_perf + self.timeout)
        return min(times, default=math.inf)

    # -- inbound --------------------------------------------------------
    def _receive(self, msg: ProtocolMessage, now: float) -> None:
        if msg.sender == self.node_id or not self.filter.accept(msg):
            return
        try:
            handler = self._handlers[msg.kind]
        except KeyError:
            return
        try:
            handler(self, msg, now)
        except (KeyError, TypeError, ValueError):
            self.malformed += 1

    def _on_sensor(self, msg, now):
        pid = int(msg.body["plant_id"])
        pv = self.plants.get(pid)
        if pv is None:
            return
        step = int(msg.body["step"])
        if pv.sensor is None or step > pv.sensor.step:
            pv.sensor = SensorSample(step, np.asarray(msg.body["x"], dtype=float),
                                     np.asarray(msg.body["y"], dtype=float),
                                     np.asarray(msg.body["ref"], dtype=float), msg.sent_at)

    def _on_heartbeat(self, msg, now):
        body = msg.body
        for pid, epoch, claim_at in zip(body["plants"], body["epochs"], body["claim_at"]):
            pv = self.plants.get(int(pid))
            if pv is None:
                continue
            pid, epoch = int(pid), int(epoch)
            key = (float(claim_at), msg.sender)
            if epoch > pv.epoch or (pv.pending_claim is not None and epoch >= pv.pending_claim[0]):
                self._demote(pv, pid, epoch, now, f"heartbeat from {msg.sender} at epoch {epoch}")
                pv.last_seen_duty = max(pv.last_seen_duty, msg.sent_at)
            elif epoch == pv.epoch:
                if pv.role is Role.DUTY:
                    if key < pv.claim_key:
                        self._demote(pv, pid, epoch, now, f"same-epoch conflict lost to {msg.sender}")
                        pv.last_seen_duty = max(pv.last_seen_duty, msg.sent_at)
                    else:
                        # keep duty under a fresh epoch so the plant gate can follow
                        pv.epoch += 1
                        pv.claim_key = (float(now), self.node_id)
                        self._force_heartbeat = True
                        self._log(now, pid, "epoch_bump", pv.epoch, f"same-epoch conflict with {msg.sender}")
                else:
                    pv.last_seen_duty = max(pv.last_seen_duty, msg.sent_at)

    def _on_perf_vars(self, msg, now):
        perf = PerfVars.from_body(msg.body)
        pv = self.plants.get(perf.plant_id)
        if pv is None or msg.epoch < pv.epoch or pv.role is Role.DUTY:
            return
        pv.epoch = max(pv.epoch, msg.epoch)
        pv.last_seen_perf = max(pv.last_seen_perf, msg.sent_at)
        pv.last_seen_duty = max(pv.last_seen_duty, msg.sent_at)
        if pv.replicated_state is None or perf.step_index >= pv.replicated_state.step_index:
            restore_state(self, perf)

    def _on_claim(self, msg, now):
        pid = int(msg.body["plant_id"])
        pv = self.plants.get(pid)
        if pv is None:
            return
        epoch = msg.epoch
        key = (float(msg.body["claim_at"]), msg.sender)
        best = pv.best_claims.get(epoch)
        if best is None or key < best:
            pv.best_claims[epoch] = key
        if pv.role is Role.DUTY:
            if epoch > pv.epoch:
                self._demote(pv, pid, epoch, now, f"claim by {msg.sender} for epoch {epoch}")
                pv.last_seen_duty = pv.last_seen_perf = key[0]
            return
        if pv.pending_claim is not None:
            mine = (pv.pending_claim[1], self.node_id)
            if epoch > pv.pending_claim[0] or (epoch == pv.pending_claim[0] and key < mine):
                self._log(now, pid, "claim_lost", epoch, f"to node {msg.sender}")
                pv.pending_claim = None
                pv.epoch = max(pv.epoch, epoch)
                pv.last_seen_duty = pv.last_seen_perf = max(pv.last_seen_duty, key[0])
                pv.handoff_seen = pv.release_seen = False
            return
        if epoch > pv.epoch:
            pv.epoch = epoch
            pv.last_seen_duty = max(pv.last_seen_duty, key[0])
            pv.last_seen_perf = max(pv.last_seen_perf, key[0])
            pv.handoff_seen = pv.release_seen = False

    def _on_release(self, msg, now):
        pv = self.plants.get(int(msg.body["plant_id"]))
        if pv is not None and msg.epoch >= pv.epoch and pv.role is Role.STANDBY:
            pv.release_seen = True

    def _on_handoff(self, msg, now):
        pv = self.plants.get(int(msg.body["plant_id"]))
        if pv is not None and msg.epoch >= pv.epoch and pv.role is Role.STANDBY:
            pv.handoff_seen = True

    _handlers = {
        MessageKind.SENSOR: _on_sensor,
        MessageKind.HEARTBEAT: _on_heartbeat,
        MessageKind.PERF_VARS: _on_perf_vars,
        MessageKind.TOKEN_CLAIM: _on_claim,
        MessageKind.TOKEN_RELEASE: _on_release,
        MessageKind.RESOURCE_HANDOFF: _on_handoff,
    }

    # -- control ----------------------------------------------------------
    def _compute(self, pid: int, pv: PlantView, now: float, out: list) -> np.ndarray:
        s = pv.sensor
        cs = pv.controller.solve(s.x, s.ref)
        self.load += cs.iterations
        u = pv.controller.model.clamp_input(cs.u_seq[0])
        mon = pv.monitor
        if pv.monitor_step == s.step and mon.xs:
            mon.xs.pop()
            mon.us.pop()
        psi = mon.update(s.x, u)
        pv.monitor_step = s.step
        pv.x_prev = mon.xs[-2] if len(mon.xs) > 1 else s.x
        pv.u_prev = mon.us[-2] if len(mon.us) > 1 else u
        pv.psi_last = 0.0 if psi is None else psi
        pv.u_last = u
        pv.setpoint = s.ref
        pv.handled_step = s.step
        out.append((self.plant_addr[pid], self._msg(MessageKind.CONTROL, pv.epoch, now, {
            "plant_id": pid, "u": _floats(u), "step": s.step})))
        return u

    def perf_vars(self, pid: int) -> PerfVars | None:
        pv = self.plants[pid]
        if pv.sensor is None or pv.u_last is None:
            return None
        s = pv.sensor
        u_prev = pv.u_prev if pv.u_prev is not None else pv.u_last
        x_prev = pv.x_prev if pv.x_prev is not None else s.x
        return PerfVars(pid, s.ref, s.x, x_prev, pv.u_last, u_prev, s.y, pv.psi_last, pv.handled_step)

    def tick(self, now: float, inbox=()) -> tuple[list[tuple[int | None, ProtocolMessage]], dict[int, np.ndarray]]:
        """Process ``inbox`` and timers at ``now``.

        Returns ``(outbox, actions)``: outbox entries are ``(dst, message)``
        with ``dst`` None for a broadcast to peer controllers; ``actions``
        maps plant id to the control input sent this tick.
        """
        if self.failed:
            return [], {}
        for msg in inbox:
            self._receive(msg, now)
        out: list = []
        actions: dict[int, np.ndarray] = {}
        new_round = False
        for pid, pv in self.plants.items():
            fresh = pv.sensor is not None and pv.sensor.step > pv.handled_step
            if pv.role is Role.STANDBY:
                if pv.pending_claim is not None:
                    if now >= pv.pending_claim[1] + self.claim_window:
                        self._become_duty(pid, pv, now)
                elif (ev := detect_switchover_event(self, pid, now)) is not None:
                    _, claim = claim_token(self, pid, ev, now)
                    out.append((BROADCAST, claim))
            if pv.role is Role.DUTY:
                if pv.sensor is not None and (fresh or pv.handled_step < 0 or pv.claim_fresh):
                    if fresh and not new_round:
                        self.load, new_round = 0, True
                    actions[pid] = self._compute(pid, pv, now, out)
                    pv.claim_fresh = False
            elif fresh:
                if not new_round:
                    self.load, new_round = 0, True
                cs = pv.controller.solve(pv.sensor.x, pv.sensor.ref)
                self.load += cs.iterations
                pv.u_shadow = cs.u_seq[0]
                pv.handled_step = pv.sensor.step
        duty = self.duty_plants()
        if duty and (now >= self.next_heartbeat or self._force_heartbeat):
            out.extend(self._heartbeat(now, duty))
        if duty and self.cpu_budget is not None and self.load > self.cpu_budget:
            pid = duty[-1]
            pv = self.plants[pid]
            if not pv.handoff_sent:
                pv.handoff_sent = True
                self._log(now, pid, "resource_handoff", pv.epoch, f"load {self.load} > {self.cpu_budget}")
                out.append((BROADCAST, self._msg(MessageKind.RESOURCE_HANDOFF, pv.epoch, now,
                                                 {"plant_id": pid, "load": self.load})))
        return out, actions

    def _heartbeat(self, now: float, duty: list[int]) -> list:
        self._force_heartbeat = False
        k = math.floor(now / self.heartbeat_interval) + 1
        self.next_heartbeat = k * self.heartbeat_interval
        epochs = [self.plants[p].epoch for p in duty]
        out = [(BROADCAST, self._msg(MessageKind.HEARTBEAT, max(epochs), now, {
            "plants": duty, "epochs": epochs,
            "claim_at": [self.plants[p].claim_key[0] for p in duty]}))]
        for pid in ([] if self.mute_perf else duty):
            perf = self.perf_vars(pid)
            if perf is not None:
                out.append((BROADCAST, self._msg(MessageKind.PERF_VARS, self.plants[pid].epoch,
                                                 now, perf.to_body())))
        return out

    def _become_duty(self, pid: int, pv: PlantView, now: float) -> None:
        epoch, claim_at = pv.pending_claim
        pv.pending_claim = None
        pv.role = Role.DUTY
        pv.epoch = epoch
        pv.claim_key = (claim_at, self.node_id)
        pv.handoff_seen = pv.release_seen = pv.handoff_sent = False
        pv.claim_fresh = True
        self._force_heartbeat = True
        self._log(now, pid, "duty_acquired", epoch, f"claimed at {claim_at:g}")

    # -- scripted faults --------------------------------------------------
    def release_tokens(self, now: float) -> list:
        """Hardware failure with a clean token release for every duty plant."""
        out = []
        for pid in self.duty_plants():
            pv = self.plants[pid]
            self._log(now, pid, "token_released", pv.epoch)
            out.append((BROADCAST, self._msg(MessageKind.TOKEN_RELEASE, pv.epoch, now, {"plant_id": pid})))
            self._demote(pv, pid, pv.epoch, now, "token released")
        return out

    def stall(self, now: float) -> None:
        """Keep heartbeating but stop broadcasting performance variables."""
        self.mute_perf = True
        self._log(now, -1, "stalled", self.epoch)

    def kill(self, now: float) -> None:
        self.failed = True
        self._log(now, -1, "killed", self.epoch)

    def recover(self, now: float) -> None:
        """Rejoin as STANDBY for every assigned plant; epochs are relearned from traffic."""
        self.failed = False
        self.mute_perf = False
        self.filter.reset()
        for pid, pv in self.plants.items():
            self._demote(pv, pid, pv.epoch, now, "recovered")
            pv.last_seen_duty = pv.last_seen_perf = now
            pv.sensor = None
            pv.handled_step = -1
        self._log(now, -1, "recovered", self.epoch)


def detect_switchover_event(node: ControllerNode, plant_id: int, now: float,
                            inbox=()) -> SwitchoverEvent | None:
    """First applicable switchover trigger for a standby, in priority order (i)-(iv)."""
    pv = node.plants[plant_id]
    for msg in inbox:
        if msg.body.get("plant_id") != plant_id or msg.epoch < pv.epoch:
            continue
        if msg.kind is MessageKind.RESOURCE_HANDOFF:
            pv.handoff_seen = True
        elif msg.kind is MessageKind.TOKEN_RELEASE:
            pv.release_seen = True
    if node.failed or pv.role is not Role.STANDBY:
        return None
    if pv.handoff_seen:
        return SwitchoverEvent.RESOURCE_EXHAUSTED
    if pv.release_seen:
        return SwitchoverEvent.HARDWARE_FAILURE_TOKEN
    if now - pv.last_seen_duty >= node.timeout:
        return SwitchoverEvent.COMM_TIMEOUT
    if now - pv.last_seen_perf >= node.timeout:
        return SwitchoverEvent.NO_STATE_BROADCAST
    return None


def claim_token(node: ControllerNode, plant_id: int, event: SwitchoverEvent,
                now: float) -> tuple[ControllerNode, ProtocolMessage]:
    """Propose the next epoch for ``plant_id``; the claim resolves after the claim window."""
    pv = node.plants[plant_id]
    if node.failed or pv.role is Role.DUTY:
        raise ProtocolViolation(f"node {node.node_id} cannot claim plant {plant_id} while {node.role_for(plant_id).value}")
    if event is None:
        raise ProtocolViolation("claim requires a switchover event")
    epoch = max([pv.epoch, *pv.best_claims]) + 1
    pv.pending_claim = (epoch, float(now))
    pv.best_claims[epoch] = (float(now), node.node_id)
    node._log(now, plant_id, "token_claim", epoch, SwitchoverEvent(event).value)
    msg = node._msg(MessageKind.TOKEN_CLAIM, epoch, now, {
        "plant_id": plant_id, "claim_at": float(now), "event": SwitchoverEvent(event).value})
    return node, msg


def claim_winner(claims) -> int:
    """Node id winning a set of ``(claim_time, node_id)`` claims for one epoch."""
    return min((float(t), int(n)) for t, n in claims)[1]


def restore_state(node: ControllerNode, perf: PerfVars) -> ControllerNode:
    pv = node.plants[perf.plant_id]
    cur = pv.replicated_state
    if cur is not None and perf.step_index < cur.step_index:
        raise StaleStateError(
            f"perf vars at step {perf.step_index} older than replicated step {cur.step_index}")
    if cur is not None and perf.step_index == cur.step_index and cur == perf:
        return node
    pv.replicated_state = perf
    pv.setpoint = perf.setpoint.copy()
    pv.monitor.seed(perf.x_prev, perf.x_last, perf.u_prev, perf.u_last)
    pv.x_prev = perf.x_prev.copy()
    pv.u_prev = perf.u_prev.copy()
    pv.u_last = perf.u_last.copy()
    pv.psi_last = perf.psi_last
    pv.monitor_step = perf.step_index
    ctrl = pv.controller
    ctrl._warm = np.tile(perf.u_last, ctrl.cfg.N)
    return node


class PlantGateway:
    """Plant-side admission of CONTROL messages.

    Admits only the highest epoch seen; each epoch is locked to the first
    sender whose CONTROL was admitted, so at most one node acts as duty per
    epoch regardless of message races.
    """

    def __init__(self, plant_id: int):
        self.plant_id = plant_id
        self.epoch = 0
        self.owner: dict[int, int] = {}
        self.rejected = 0

    def admit(self, msg: ProtocolMessage) -> bool:
        if msg.kind is not MessageKind.CONTROL or int(msg.body.get("plant_id", -1)) != self.plant_id:
            return False
        if msg.epoch < self.epoch:
            self.rejected += 1
            return False
        owner = self.owner.setdefault(msg.epoch, msg.sender)
        if owner != msg.sender:
            self.rejected += 1
            return False
        self.epoch = msg.epoch
        return True


@dataclass(frozen=True)
class Allocation:
    duty: dict[int, int]
    standby: dict[int, list[int]]

    def controllers_for(self, plant: int) -> list[int]:
        return [self.duty[plant], *self.standby[plant]]


def assign_plants(controllers, plants, capacity: int) -> Allocation:
    """Round-robin duty assignment by ascending ids; every other controller is a standby."""
    controllers = sorted(controllers)
    plants = sorted(plants)
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if not controllers:
        raise ValueError("at least one controller is required")
    if len(plants) > len(controllers) * capacity:
        raise CapacityError(
            f"{len(plants)} plants exceed {len(controllers)} controllers x capacity {capacity}")
    duty, standby = {}, {}
    n = len(controllers)
    for i, p in enumerate(plants):
        j = i % n
        duty[p] = controllers[j]
        standby[p] = [controllers[(j + s) % n] for s in range(1, n)]
        if not standby[p]:
            warnings.warn(f"plant {p} has no standby controller", RuntimeWarning, stacklevel=2)
    return Allocation(duty, standby)


def availability(n: int, a: float) -> float:
    """Probability that at least one of ``n`` independent controllers is up."""
    if n < 1 or not 0 < a < 1:
        raise ValueError("need n >= 1 and 0 < a < 1")
    return 1.0 - (1.0 - a) ** n


def node_tick(node: ControllerNode, now: float, inbox=()):
    out, actions = node.tick(now, inbox)
    return node, out, actions
