"""Scenario runner: plants, redundant controllers, network and PV accounting.

Simulated mode is event driven and fully deterministic for a given seed.
Real-network mode runs the same node and plant logic against loopback TCP
sockets on a scaled wall clock.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .config import FAULT_ACTIONS, ScenarioConfig
from .dependability import (BROADCAST, ControllerNode, PlantGateway, assign_plants)
from .dissipativity import evaluate_trajectory, saturation_end, storage, supply_rate
from .ephemeris import load_setpoint_file, sun_position
from .messages import MessageKind, ProtocolMessage
from .metrics import MetricsLog
from .netsim import EventQueue
from .plant import PlantState, step
from .pvmodel import EnergyLedger, accumulate, clear_sky_irradiance, misalignment_angle, panel_power

log = logging.getLogger(__name__)

PLANT_ADDR_BASE = 1000
SETTLING_BAND_DEG = 1.0


def plant_addr(pid: int) -> int:
    return PLANT_ADDR_BASE + pid


class SetpointSource:
    def __init__(self, cfg: ScenarioConfig):
        s = cfg.setpoint
        self.kind = s.kind
        self.cal = cfg.calibration_map()
        self.loc = cfg.geo()
        self.start = cfg.start_datetime()
        self.model = cfg.model()
        if s.kind == "fixed":
            self.fixed = np.asarray(s.ref, dtype=float)
        elif s.kind == "ephemeris":
            self.interval_ms = s.interval_s * 1000.0
        else:
            times, refs = load_setpoint_file(s.path, self.cal)
            if not times:
                raise ValueError(f"setpoint file {s.path} has no records")
            tz = self.loc.tz
            self.times = [t if t.tzinfo else t.replace(tzinfo=tz) for t in times]
            self.refs = refs

    def ref_at(self, t_ms: float) -> np.ndarray:
        if self.kind == "fixed":
            return self.fixed
        if self.kind == "ephemeris":
            tq = math.floor(t_ms / self.interval_ms) * self.interval_ms
            pos = sun_position(self.loc, self.start + timedelta(milliseconds=tq))
            return self.model.clamp_state(self.cal.to_tracker(pos))
        wall = self.start + timedelta(milliseconds=t_ms)
        idx = 0
        for i, t in enumerate(self.times):
            if t <= wall:
                idx = i
            else:
                break
        return self.model.clamp_state(self.refs[idx])


@dataclass
class PlantRuntime:
    pid: int
    state: PlantState
    gateway: PlantGateway
    controllers: list[int]
    u_hold: np.ndarray | None = None
    u_sender: int = -1
    seq: int = 0
    xs: list = field(default_factory=list)
    us: list = field(default_factory=list)
    refs: list = field(default_factory=list)
    ledger: EnergyLedger = field(default_factory=EnergyLedger)


@dataclass
class Takeover:
    plant: int
    node: int
    action: str
    fault_ms: float
    epoch: int
    takeover_ms: float | None = None
    election_ms: float | None = None


class Simulation:
    def __init__(self, cfg: ScenarioConfig, real_net: bool = False):
        self.cfg = cfg
        self.real_net = real_net
        self.model = cfg.model()
        self.dt_ms = cfg.plant.dt * 1000.0
        self.K = int(math.floor(cfg.duration_s / cfg.plant.dt + 1e-9))
        self.end_ms = cfg.duration_s * 1000.0
        pr = cfg.protocol
        ctrl_ids = list(range(1, pr.n_controllers + 1))
        plant_ids = list(range(1, cfg.plant.count + 1))
        self.alloc = assign_plants(ctrl_ids, plant_ids, pr.capacity)
        mpc_cfg = cfg.mpc_config()
        supply = cfg.supply_params()
        self.nodes: dict[int, ControllerNode] = {}
        for i in ctrl_ids:
            mine = [p for p in plant_ids if i in self.alloc.controllers_for(p)]
            self.nodes[i] = ControllerNode(
                i, self.model, mpc_cfg, supply,
                plant_addr={p: plant_addr(p) for p in mine},
                duty_plants=[p for p in mine if self.alloc.duty[p] == i],
                peers=ctrl_ids,
                heartbeat_interval=pr.heartbeat_interval_ms,
                timeout=pr.timeout_ms,
                claim_window=pr.claim_window_ms,
                cpu_budget=pr.cpu_budget,
            )
        x0 = np.asarray(cfg.plant.x0, dtype=float)
        self.plants = {p: PlantRuntime(p, PlantState(x0.copy()), PlantGateway(p),
                                       self.alloc.controllers_for(p)) for p in plant_ids}
        self.setpoints = SetpointSource(cfg)
        self.array = cfg.array_config()
        self.cal = cfg.calibration_map()
        self.loc = cfg.geo()
        self.start = cfg.start_datetime()
        self.partitioned: set[int] = set()
        self.faults = sorted(((f.time_s * 1000.0, i, f) for i, f in enumerate(cfg.faults)),
                             key=lambda e: (e[0], e[1]))
        self.takeovers: list[Takeover] = []
        self.applied: dict[tuple[int, int], set[int]] = {}
        self.records: list[dict] = []
        self.partition_drops = 0
        self._latencies: list[float] = []
        self._all_latencies: list[float] = []
        self.endpoints = ctrl_ids + [plant_addr(p) for p in plant_ids]
        self.queue = EventQueue(cfg.rng_seed, self.endpoints, cfg.link_profile())
        self.transport = None
        self.t = 0.0
        self._wakes: dict[int, float] = {i: 0.0 for i in ctrl_ids}

    # -- transport ----------------------------------------------------------
    def _send(self, src: int, dst: int, msg: ProtocolMessage) -> None:
        if src in self.partitioned or dst in self.partitioned:
            self.partition_drops += 1
            return
        if self.transport is not None:
            self.transport.send(msg, src, dst)
        else:
            self.queue.send(msg, src, dst)

    def _route_outbox(self, src: int, outbox) -> None:
        node = self.nodes[src]
        for dst, msg in outbox:
            if dst is BROADCAST:
                for peer in node.peers:
                    self._send(src, peer, msg)
            else:
                self._send(src, dst, msg)

    def _deliver(self, dst: int, msg: ProtocolMessage, latency: float, inboxes: dict) -> None:
        if dst in self.partitioned or msg.sender in self.partitioned:
            self.partition_drops += 1
            return
        self._latencies.append(latency)
        self._all_latencies.append(latency)
        if dst >= PLANT_ADDR_BASE:
            self._plant_receive(self.plants[dst - PLANT_ADDR_BASE], msg)
        else:
            inboxes.setdefault(dst, []).append(msg)

    def _plant_receive(self, pr: PlantRuntime, msg: ProtocolMessage) -> None:
        if msg.kind is not MessageKind.CONTROL:
            return
        if not pr.gateway.admit(msg):
            return
        self.applied.setdefault((pr.pid, msg.epoch), set()).add(msg.sender)
        pr.u_hold = self.model.clamp_input(np.asarray(msg.body["u"], dtype=float))
        pr.u_sender = msg.sender
        for tk in self.takeovers:
            if tk.plant == pr.pid and tk.takeover_ms is None and msg.epoch > tk.epoch:
                tk.takeover_ms = self.t - tk.fault_ms

    # -- faults ---------------------------------------------------------------
    def inject_fault(self, action: str, node: int, t: float | None = None) -> None:
        """Apply a fault action to ``node`` now (or at ``t`` ms)."""
        if node not in self.nodes:
            raise KeyError(f"unknown node {node}")
        if action not in FAULT_ACTIONS:
            raise ValueError(f"unknown fault action {action!r}")
        self._apply_fault(self.t if t is None else t, action, node)

    def _apply_fault(self, t: float, action: str, nid: int) -> None:
        node = self.nodes[nid]
        log.info("t=%.0f ms: %s node %d", t, action, nid)
        if action in ("KILL", "PARTITION", "RELEASE", "STALL"):
            for pr in self.plants.values():
                g = pr.gateway
                if g.owner.get(g.epoch) == nid:
                    self.takeovers.append(Takeover(pr.pid, nid, action, t, g.epoch))
        if action == "KILL":
            node.kill(t)
        elif action == "RELEASE":
            self._route_outbox(nid, node.release_tokens(t))
            node.kill(t)
        elif action == "STALL":
            node.stall(t)
        elif action == "PARTITION":
            self.partitioned.add(nid)
            self.partition_drops += self.queue.drop_pending(lambda e: e.src == nid or e.dst == nid)
        elif action == "HEAL":
            self.partitioned.discard(nid)
        elif action == "RECOVER":
            node.recover(t)

    # -- plant ----------------------------------------------------------------
    def _plant_step(self, k: int, t: float) -> None:
        rec: dict = {"step": k, "t": k * self.cfg.plant.dt}
        energy = 0.0
        for pid, pr in self.plants.items():
            if k == 0:
                u = np.zeros(self.model.m)
                lost = False
                sender = -1
            else:
                lost = pr.u_hold is None
                u = np.zeros(self.model.m) if lost else pr.u_hold
                sender = -1 if lost else pr.u_sender
                pr.state = step(self.model, pr.state, u, clamp_input=True)
            pr.u_hold = None
            x = pr.state.x
            ref = self.setpoints.ref_at(t)
            pr.xs.append(x.copy())
            pr.us.append(np.asarray(u, dtype=float).copy())
            pr.refs.append(np.asarray(ref, dtype=float).copy())
            y = self.model.C @ x
            pre = f"p{pid}_"
            rec[pre + "y_az"], rec[pre + "y_el"] = float(y[0]), float(y[1])
            rec[pre + "ref_az"], rec[pre + "ref_el"] = float(ref[0]), float(ref[1])
            rec[pre + "u_az"], rec[pre + "u_el"] = float(u[0]), float(u[1])
            rec[pre + "duty"] = sender
            rec[pre + "epoch"] = pr.gateway.epoch
            rec[pre + "loss_of_control"] = bool(lost)
            if k >= 2:
                p = self.nodes[min(self.nodes)].supply
                dx = pr.xs[-2] - pr.xs[-3]
                du = pr.us[-1] - pr.us[-2]
                rec[pre + "psi"] = supply_rate(du, dx, p)
                rec[pre + "V"] = storage(dx, p)
            else:
                rec[pre + "psi"] = rec[pre + "V"] = None
            if self.array is not None:
                wall = self.start + timedelta(milliseconds=t)
                sun = sun_position(self.loc, wall)
                p_az, p_el = self.cal.panel_direction(x)
                theta = misalignment_angle(p_az, p_el, sun.azimuth, sun.elevation)
                power = panel_power(clear_sky_irradiance(sun.elevation), theta, self.array)
                rec[pre + "power_w"] = power
                energy += pr.ledger.total_kwh
                accumulate(pr.ledger, wall, power, self.cfg.plant.dt if k < self.K else 0.0)
            if k < self.K:
                pr.seq += 1
                msg = ProtocolMessage(MessageKind.SENSOR, plant_addr(pid), pr.gateway.epoch, pr.seq, t, {
                    "plant_id": pid, "step": k, "x": [float(v) for v in x],
                    "y": [float(v) for v in y], "ref": [float(v) for v in ref]})
                for c in pr.controllers:
                    self._send(plant_addr(pid), c, msg)
        if self.array is not None:
            rec["energy_kwh"] = energy
        stats = self.transport.stats if self.transport is not None else self.queue.stats
        rec["msgs_sent"] = stats.sent
        rec["msgs_delivered"] = stats.delivered
        rec["drops"] = stats.dropped + self.partition_drops
        lat = self._latencies
        rec["latency_n"] = len(lat)
        rec["latency_mean_ms"] = float(np.mean(lat)) if lat else None
        rec["latency_max_ms"] = float(np.max(lat)) if lat else None
        self._latencies = []
        self.records.append(rec)

    # -- nodes ----------------------------------------------------------------
    def _tick_nodes(self, t: float, inboxes: dict, force: bool = False) -> None:
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            inbox = inboxes.get(nid, ())
            if node.failed:
                continue
            if not (force or inbox or self._wakes[nid] <= t):
                continue
            out, _ = node.tick(t, inbox)
            self._route_outbox(nid, out)
            wake = node.next_wakeup()
            self._wakes[nid] = wake if wake > t else t + 1.0

    # -- main loops -------------------------------------------------------------
    def run(self) -> MetricsLog:
        if self.real_net:
            return self._run_real()
        k = 0
        fi = 0
        while True:
            cands = [k * self.dt_ms if k <= self.K else math.inf]
            nt = self.queue.next_time()
            if nt is not None:
                cands.append(nt)
            if fi < len(self.faults):
                cands.append(self.faults[fi][0])
            cands.extend(w for nid, w in self._wakes.items() if not self.nodes[nid].failed)
            t = min(cands)
            if t > self.end_ms or math.isinf(t):
                break
            self.t = t
            while fi < len(self.faults) and self.faults[fi][0] <= t:
                _, _, f = self.faults[fi]
                self._apply_fault(t, f.action, f.node)
                fi += 1
            inboxes: dict[int, list] = {}
            for env in self.queue.advance(t):
                self._deliver(env.dst, env.msg, env.latency, inboxes)
            if k <= self.K and k * self.dt_ms <= t:
                self._plant_step(k, t)
                k += 1
            self._tick_nodes(t, inboxes)
        return self._finish()

    def _run_real(self) -> MetricsLog:
        from .sockets import SocketTransport

        speed = self.cfg.real_net_speedup
        wall0 = _time.monotonic()

        def clock() -> float:
            return (_time.monotonic() - wall0) * 1000.0 * speed

        self.transport = SocketTransport(self.endpoints, clock=clock)
        try:
            k = 0
            fi = 0
            while k <= self.K:
                t = clock()
                self.t = t
                while fi < len(self.faults) and self.faults[fi][0] <= t:
                    _, _, f = self.faults[fi]
                    self._apply_fault(t, f.action, f.node)
                    fi += 1
                inboxes: dict[int, list] = {}
                for dst, msg, recv_t in self.transport.poll():
                    self._deliver(dst, msg, max(0.0, recv_t - msg.sent_at), inboxes)
                if k * self.dt_ms <= t:
                    self._plant_step(k, t)
                    k += 1
                self._tick_nodes(t, inboxes, force=True)
                _time.sleep(0.0005)
        finally:
            self.transport.close()
        return self._finish()

    # -- summary ------------------------------------------------------------------
    def _events(self) -> list[dict]:
        evs = [e for n in self.nodes.values() for e in n.events]
        evs.sort(key=lambda e: (e.t, e.node))
        return [{"t": e.t, "node": e.node, "plant": e.plant, "kind": e.kind,
                 "epoch": e.epoch, "detail": e.detail} for e in evs]

    def _finish(self) -> MetricsLog:
        events = self._events()
        for tk in self.takeovers:
            for e in events:
                if e["kind"] == "duty_acquired" and e["plant"] == tk.plant \
                        and e["epoch"] > tk.epoch and e["t"] >= tk.fault_ms:
                    tk.election_ms = e["t"] - tk.fault_ms
                    break
        summary = summarize(self.records, self.cfg, sorted(self.plants))
        summary["safety_ok"] = all(len(s) <= 1 for s in self.applied.values())
        acquired: dict[tuple[int, int], set] = {}
        for p, d in self.alloc.duty.items():
            acquired[(p, 1)] = {d}
        for e in events:
            if e["kind"] in ("duty_acquired", "epoch_bump"):
                acquired.setdefault((e["plant"], e["epoch"]), set()).add(e["node"])
        summary["duty_unique_per_epoch"] = all(len(s) <= 1 for s in acquired.values())
        done = [tk for tk in self.takeovers if tk.takeover_ms is not None]
        summary["takeovers"] = len(self.takeovers)
        summary["takeover_latency_ms"] = max((tk.takeover_ms for tk in done), default=None)
        el = [tk.election_ms for tk in self.takeovers if tk.election_ms is not None]
        summary["election_latency_ms"] = max(el, default=None)
        summary["takeover_complete"] = len(done) == len(self.takeovers)
        lat = self._all_latencies
        summary["latency_mean_ms"] = float(np.mean(lat)) if lat else None
        summary["latency_max_ms"] = float(np.max(lat)) if lat else None
        stats = self.transport.stats if self.transport is not None else self.queue.stats
        summary["messages_sent"] = stats.sent
        summary["messages_dropped"] = stats.dropped + self.partition_drops
        summary["retransmits"] = stats.retransmits
        summary["gateway_rejections"] = sum(pr.gateway.rejected for pr in self.plants.values())
        summary["malformed_messages"] = sum(n.malformed for n in self.nodes.values())
        columns = list(self.records[0]) if self.records else []
        return MetricsLog(self.records, summary, events, columns)


def settling_time(ts, ys, refs, band: float = SETTLING_BAND_DEG) -> float | None:
    """First time after which every axis stays within ``band`` of its reference."""
    err = np.max(np.abs(np.asarray(ys) - np.asarray(refs)), axis=1)
    outside = np.flatnonzero(err > band)
    if outside.size == 0:
        return float(ts[0])
    idx = int(outside[-1]) + 1
    return float(ts[idx]) if idx < len(ts) else None


def _segment_verdicts(ys, us, refs, cfg: ScenarioConfig, supply):
    """Stability verdict for every stretch of the run with a constant reference.

    Increments across a reference change carry the setpoint jump, so the
    decay test restarts in each segment. Segments shorter than three
    samples carry no decay information and are skipped.
    """
    change = np.flatnonzero(np.any(refs[1:] != refs[:-1], axis=1)) + 1
    bounds = np.concatenate(([0], change, [len(ys)]))
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        # input applied from sample k to k+1 is recorded at k+1
        u_traj = us[a + 1:b]
        x_traj = ys[a:a + len(u_traj)]
        if len(u_traj) < 3:
            continue
        k0 = cfg.dissipativity.k0
        if k0 is None:
            k0 = saturation_end(u_traj, cfg.plant.slew_max)
        k0 = min(k0, len(u_traj) - 2)
        out.append((k0, evaluate_trajectory(x_traj, u_traj, supply.with_k0(k0), cfg.increment_bounds())))
    return out


def summarize(records: list[dict], cfg: ScenarioConfig, plant_ids) -> dict:
    """Summary values that derive from the per-step records alone."""
    out: dict = {"records": len(records)}
    if not records:
        return out
    ts = [r["t"] for r in records]
    supply = cfg.supply_params()
    settle_all, stable_all = [], []
    for pid in plant_ids:
        pre = f"p{pid}_"
        ys = np.array([[r[pre + "y_az"], r[pre + "y_el"]] for r in records])
        refs = np.array([[r[pre + "ref_az"], r[pre + "ref_el"]] for r in records])
        us = np.array([[r[pre + "u_az"], r[pre + "u_el"]] for r in records])
        st = settling_time(ts, ys, refs)
        constant_ref = bool(np.all(refs == refs[0]))
        overshoot = monotone = None
        if constant_ref:
            direction = np.sign(refs[0] - ys[0])
            signed = (ys - refs) * np.where(direction == 0, 1.0, direction)
            overshoot = float(max(0.0, signed.max()))
            monotone = bool(np.all(np.diff(ys, axis=0) * direction >= -1e-12))
        loss = sum(1 for r in records if r[pre + "loss_of_control"])
        verdicts = _segment_verdicts(ys, us, refs, cfg, supply)
        k0 = verdicts[0][0] if len(verdicts) == 1 else None
        verdict = verdicts[0][1] if len(verdicts) == 1 else None
        seg_ok = [v.stable for _, v in verdicts]
        vals = {
            "settling_time_s": st,
            "overshoot_deg": overshoot,
            "monotone_approach": monotone,
            "loss_of_control_steps": loss,
            "final_error_deg": float(np.abs(ys[-1] - refs[-1]).max()),
            "k0": k0,
            "dissipation_ok": all(bool(v.dissipation_ok.all()) for _, v in verdicts) if verdicts else None,
            "decay_ok": all(bool(v.decay_ok.all()) for _, v in verdicts) if verdicts else None,
            "increment_bounds_ok": all(bool(v.bounds_ok.all()) for _, v in verdicts) if verdicts else None,
            "stable": all(seg_ok) if verdicts else None,
            "segments": len(verdicts),
            "violated_at": None if verdict is None else verdict.violated_at,
        }
        for key, v in vals.items():
            out[f"{pre}{key}"] = v
        settle_all.append(st)
        if verdicts:
            stable_all.append(all(seg_ok))
    first = f"p{plant_ids[0]}_"
    for key in ("settling_time_s", "overshoot_deg", "monotone_approach", "loss_of_control_steps",
                "final_error_deg", "stable", "violated_at", "k0"):
        out[key] = out[first + key]
    if len(plant_ids) > 1:
        out["settling_time_s"] = None if None in settle_all else max(settle_all)
        out["stable"] = all(stable_all) if stable_all else None
    if "energy_kwh" in records[0]:
        out["energy_kwh"] = records[-1]["energy_kwh"]
    return out


def run_scenario(cfg: ScenarioConfig, real_net: bool = False) -> MetricsLog:
    return Simulation(cfg, real_net=real_net).run()
