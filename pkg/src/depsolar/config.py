"""Scenario configuration: JSON file <-> nested dataclasses, with strict validation.

Unknown keys are rejected at every level. ``load_config`` collects every
violation it finds and raises them together in one ``ConfigError``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from datetime import date, datetime, time
from pathlib import Path
from typing import Any

import numpy as np

from .dissipativity import IncrementBounds, SupplyRateParams
from .ephemeris import CalibrationMap, GeoLocation
from .mpc import MpcConfig
from .netsim import JitterDist, LinkProfile
from .plant import StateSpaceModel, TrackerParams, make_tracker_model
from .pvmodel import ArrayConfig

FAULT_ACTIONS = ("KILL", "RECOVER", "PARTITION", "HEAL", "RELEASE", "STALL")
SETPOINT_KINDS = ("fixed", "ephemeris", "file")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n  " + "\n  ".join(self.errors))


@dataclass
class PlantSection:
    slew_max: float = 0.45
    dt: float = 1.0
    x0: list[float] = field(default_factory=lambda: [0.0, 0.0])
    count: int = 1


@dataclass
class MpcSection:
    Q: list[list[float]] | None = None
    R: list[list[float]] | None = None
    N: int = 10
    max_iters: int = 500
    tol: float = 1e-9


@dataclass
class DissipativitySection:
    P: list[list[float]] | None = None
    K: list[list[float]] | None = None
    S: list[list[float]] | None = None
    L: list[list[float]] | None = None
    tau: float = 0.9
    gamma: float = 0.99
    # None: start the decay test once input saturation has ended
    k0: int | None = None
    delta_alpha: float | None = None
    delta_beta: float | None = None


@dataclass
class ProtocolSection:
    n_controllers: int = 2
    heartbeat_interval_ms: float = 100.0
    timeout_ms: float = 1000.0
    capacity: int = 1
    claim_window_ms: float = 150.0
    cpu_budget: float | None = None


@dataclass
class JitterSection:
    kind: str = "truncated-normal"
    params: dict[str, float] = field(default_factory=lambda: dict(JitterDist().params))


@dataclass
class LinkSection:
    base_latency_ms: float = 40.0
    jitter: JitterSection = field(default_factory=JitterSection)
    loss_prob: float = 0.0
    reliable: bool = True
    dup_prob: float = 0.0


@dataclass
class LocationSection:
    latitude: float = -33.884
    longitude: float = 151.199
    utc_offset_hours: float = 10.0


@dataclass
class CalibrationSection:
    center_deg: float = 0.0
    scale: float = 0.5
    offset_deg: float = 45.0
    park_elevation: float = 0.0


@dataclass
class ArraySection:
    module_count: int = 72
    module_peak_w: float = 280.0
    efficiency: float = 0.172
    derating: float = 0.35


@dataclass
class FaultSpec:
    time_s: float
    action: str
    node: int


@dataclass
class SetpointSection:
    kind: str = "fixed"
    ref: list[float] | None = field(default_factory=lambda: [45.0, 45.0])
    interval_s: float = 60.0
    path: str | None = None


@dataclass
class ScenarioConfig:
    duration_s: float = 200.0
    rng_seed: int = 0
    start: str = "2017-04-18T06:00:00"
    plant: PlantSection = field(default_factory=PlantSection)
    mpc: MpcSection = field(default_factory=MpcSection)
    dissipativity: DissipativitySection = field(default_factory=DissipativitySection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    link: LinkSection = field(default_factory=LinkSection)
    location: LocationSection = field(default_factory=LocationSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    array: ArraySection | None = None
    faults: list[FaultSpec] = field(default_factory=list)
    setpoint: SetpointSection = field(default_factory=SetpointSection)
    real_net_speedup: float = 1.0

    # -- domain objects ---------------------------------------------------
    def tracker_params(self) -> TrackerParams:
        return TrackerParams(self.plant.slew_max, self.plant.dt)

    def model(self) -> StateSpaceModel:
        return make_tracker_model(self.tracker_params())

    def mpc_config(self) -> MpcConfig:
        Q = np.eye(2) if self.mpc.Q is None else np.array(self.mpc.Q, dtype=float)
        R = 0.1 * np.eye(2) if self.mpc.R is None else np.array(self.mpc.R, dtype=float)
        return MpcConfig(Q, R, self.mpc.N, None, self.mpc.max_iters, self.mpc.tol)

    def supply_params(self, k0: int = 0) -> SupplyRateParams:
        d = self.dissipativity
        return SupplyRateParams(
            np.eye(2) if d.P is None else np.array(d.P, dtype=float),
            np.eye(2) if d.K is None else np.array(d.K, dtype=float),
            np.zeros((2, 2)) if d.S is None else np.array(d.S, dtype=float),
            np.eye(2) if d.L is None else np.array(d.L, dtype=float),
            d.tau, d.gamma, d.k0 if d.k0 is not None else k0,
        )

    def increment_bounds(self) -> IncrementBounds:
        d, p = self.dissipativity, self.plant
        step = p.slew_max * p.dt
        return IncrementBounds(
            d.delta_alpha if d.delta_alpha is not None else 2 * step ** 2 + 1e-9,
            d.delta_beta if d.delta_beta is not None else 2 * (2 * p.slew_max) ** 2 + 1e-9,
        )

    def link_profile(self) -> LinkProfile:
        ln = self.link
        return LinkProfile(ln.base_latency_ms, JitterDist(ln.jitter.kind, dict(ln.jitter.params)),
                           ln.loss_prob, ln.reliable, ln.dup_prob)

    def geo(self) -> GeoLocation:
        return GeoLocation(**asdict(self.location))

    def calibration_map(self) -> CalibrationMap:
        return CalibrationMap(**asdict(self.calibration))

    def array_config(self) -> ArrayConfig | None:
        return None if self.array is None else ArrayConfig(**asdict(self.array))

    def start_datetime(self) -> datetime:
        t = datetime.fromisoformat(self.start)
        if t.tzinfo is None:
            t = t.replace(tzinfo=self.geo().tz)
        return t

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _field_types(cls) -> dict[str, Any]:
    import typing
    return typing.get_type_hints(cls)


def _build(cls, data, path: str, errors: list[str]):
    if not isinstance(data, dict):
        errors.append(f"{path or '<root>'}: expected an object")
        return None
    hints = _field_types(cls)
    names = {f.name for f in fields(cls)}
    for key in sorted(set(data) - names):
        errors.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        where = f"{path + '.' if path else ''}{f.name}"
        hint = hints[f.name]
        sub = _dataclass_in(hint)
        if f.name == "faults":
            if not isinstance(value, list):
                errors.append(f"{where}: expected a list")
                continue
            out = []
            for i, item in enumerate(value):
                fs = _build(FaultSpec, item, f"{where}[{i}]", errors) if isinstance(item, dict) else None
                if fs is None:
                    errors.append(f"{where}[{i}]: expected an object with time_s, action, node")
                else:
                    out.append(fs)
            kwargs[f.name] = out
        elif sub is not None and value is not None:
            built = _build(sub, value, where, errors)
            if built is not None:
                kwargs[f.name] = built
        else:
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{path or '<root>'}: {exc}")
        return None


def _dataclass_in(hint):
    import typing
    if is_dataclass(hint):
        return hint
    for arg in typing.get_args(hint):
        if is_dataclass(arg):
            return arg
    return None


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(cfg: ScenarioConfig) -> list[str]:
    """Semantic checks; returns every violation found (empty when valid)."""
    errs: list[str] = []

    def need(cond, msg):
        if not cond:
            errs.append(msg)

    need(_is_num(cfg.duration_s) and cfg.duration_s > 0, "duration_s: must be > 0")
    need(isinstance(cfg.rng_seed, int) and not isinstance(cfg.rng_seed, bool), "rng_seed: must be an integer")
    try:
        datetime.fromisoformat(cfg.start)
    except (TypeError, ValueError):
        errs.append("start: must be an ISO-8601 timestamp")
    p = cfg.plant
    need(_is_num(p.slew_max) and p.slew_max > 0, "plant.slew_max: must be > 0")
    need(_is_num(p.dt) and p.dt > 0, "plant.dt: must be > 0")
    need(isinstance(p.x0, list) and len(p.x0) == 2 and all(_is_num(v) and 0 <= v <= 90 for v in p.x0),
         "plant.x0: must be two angles in [0, 90]")
    need(isinstance(p.count, int) and p.count >= 1, "plant.count: must be an integer >= 1")
    m = cfg.mpc
    need(isinstance(m.N, int) and m.N >= 1, "mpc.N: must be an integer >= 1")
    need(isinstance(m.max_iters, int) and m.max_iters >= 1, "mpc.max_iters: must be an integer >= 1")
    need(_is_num(m.tol) and m.tol > 0, "mpc.tol: must be > 0")
    for name in ("Q", "R"):
        mat = getattr(m, name)
        if mat is not None:
            try:
                a = np.array(mat, dtype=float)
                need(a.shape == (2, 2), f"mpc.{name}: must be a 2x2 matrix")
            except (TypeError, ValueError):
                errs.append(f"mpc.{name}: must be a numeric matrix")
    if not errs or all(not e.startswith("mpc.") for e in errs):
        try:
            cfg.mpc_config()
        except ValueError as exc:
            errs.append(f"mpc: {exc}")
    d = cfg.dissipativity
    need(_is_num(d.tau) and 0 < d.tau < 1, "dissipativity.tau: must lie in (0, 1)")
    need(_is_num(d.gamma) and 0 < d.gamma < 1, "dissipativity.gamma: must lie in (0, 1)")
    need(d.k0 is None or (isinstance(d.k0, int) and d.k0 >= 0), "dissipativity.k0: must be null or an integer >= 0")
    for name in ("delta_alpha", "delta_beta"):
        v = getattr(d, name)
        need(v is None or (_is_num(v) and v > 0), f"dissipativity.{name}: must be null or > 0")
    if not any(e.startswith("dissipativity.") for e in errs):
        try:
            cfg.supply_params()
        except ValueError as exc:
            errs.append(f"dissipativity: {exc}")
    pr = cfg.protocol
    need(isinstance(pr.n_controllers, int) and pr.n_controllers >= 1, "protocol.n_controllers: must be an integer >= 1")
    need(_is_num(pr.heartbeat_interval_ms) and pr.heartbeat_interval_ms > 0, "protocol.heartbeat_interval_ms: must be > 0")
    need(_is_num(pr.timeout_ms) and pr.timeout_ms > 0, "protocol.timeout_ms: must be > 0")
    need(isinstance(pr.capacity, int) and pr.capacity >= 1, "protocol.capacity: must be an integer >= 1")
    need(_is_num(pr.claim_window_ms) and pr.claim_window_ms >= 0, "protocol.claim_window_ms: must be >= 0")
    need(pr.cpu_budget is None or _is_num(pr.cpu_budget), "protocol.cpu_budget: must be null or a number")
    if isinstance(pr.n_controllers, int) and isinstance(pr.capacity, int) and isinstance(p.count, int):
        need(p.count <= pr.n_controllers * pr.capacity,
             "plant.count: exceeds protocol.n_controllers x protocol.capacity")
    try:
        cfg.link_profile()
    except (TypeError, ValueError, KeyError) as exc:
        errs.append(f"link: {exc}")
    try:
        cfg.geo()
    except (TypeError, ValueError) as exc:
        errs.append(f"location: {exc}")
    c = cfg.calibration
    need(_is_num(c.scale) and c.scale != 0, "calibration.scale: must be nonzero")
    if cfg.array is not None:
        try:
            cfg.array_config()
        except (TypeError, ValueError) as exc:
            errs.append(f"array: {exc}")
    n = pr.n_controllers if isinstance(pr.n_controllers, int) else 0
    for i, f in enumerate(cfg.faults):
        where = f"faults[{i}]"
        need(f.action in FAULT_ACTIONS, f"{where}.action: must be one of {', '.join(FAULT_ACTIONS)}")
        need(_is_num(f.time_s) and 0 <= f.time_s <= (cfg.duration_s if _is_num(cfg.duration_s) else 0),
             f"{where}.time_s: must lie within [0, duration_s]")
        need(isinstance(f.node, int) and 1 <= f.node <= n, f"{where}.node: unknown controller {f.node!r}")
    s = cfg.setpoint
    need(s.kind in SETPOINT_KINDS, f"setpoint.kind: must be one of {', '.join(SETPOINT_KINDS)}")
    if s.kind == "fixed":
        need(isinstance(s.ref, list) and len(s.ref) == 2 and all(_is_num(v) for v in s.ref),
             "setpoint.ref: a fixed setpoint needs two angles")
        need(s.path is None, "setpoint: a fixed setpoint must not also name a file")
    elif s.kind == "ephemeris":
        need(s.path is None, "setpoint: an ephemeris setpoint must not also name a file")
        need(_is_num(s.interval_s) and s.interval_s > 0, "setpoint.interval_s: must be > 0")
    elif s.kind == "file":
        need(isinstance(s.path, str) and bool(s.path), "setpoint.path: required for a file setpoint")
    need(_is_num(cfg.real_net_speedup) and cfg.real_net_speedup > 0, "real_net_speedup: must be > 0")
    return errs


def config_from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    errors: list[str] = []
    cfg = _build(ScenarioConfig, copy.deepcopy(data), "", errors)
    if cfg is None:
        raise ConfigError(errors)
    try:
        errors.extend(validate(cfg))
    except (TypeError, ValueError, AttributeError) as exc:
        errors.append(f"<root>: {exc}")
    if errors:
        raise ConfigError(errors)
    s = cfg.setpoint
    if s.kind == "file" and base_dir is not None and not Path(s.path).is_absolute():
        s.path = str((base_dir / s.path).resolve())
    if s.kind != "fixed":
        s.ref = None
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return config_from_dict(data, base_dir=path.parent)


def set_dotted(data: dict, dotted: str, value) -> dict:
    """Return a copy of ``data`` with ``dotted`` (e.g. ``mpc.N``) set to ``value``."""
    out = copy.deepcopy(data)
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError([f"{dotted}: {part} is not an object"])
        node = nxt
    node[parts[-1]] = value
    return out
