"""Clear-sky PV power and daily energy accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta

import numpy as np

from .ephemeris import CalibrationMap, GeoLocation, sun_position

SOLAR_CONSTANT = 1353.0
MAX_AIR_MASS = 38.0


class OrderingError(ValueError):
    pass


@dataclass(frozen=True)
class ArrayConfig:
    module_count: int = 72
    module_peak_w: float = 280.0
    efficiency: float = 0.172
    derating: float = 0.35

    def __post_init__(self):
        if self.module_count < 1:
            raise ValueError("module_count must be >= 1")
        if not 0 < self.efficiency < 1:
            raise ValueError("efficiency must lie in (0, 1)")
        if not 0 < self.derating <= 1:
            raise ValueError("derating must lie in (0, 1]")

    @property
    def peak_w(self) -> float:
        return self.module_count * self.module_peak_w


def misalignment_angle(panel_az, panel_el, sun_az, sun_el) -> float:
    """Angle in degrees between the panel normal and the sun direction."""
    pe, se = math.radians(panel_el), math.radians(sun_el)
    c = (math.sin(pe) * math.sin(se)
         + math.cos(pe) * math.cos(se) * math.cos(math.radians(panel_az - sun_az)))
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def clear_sky_irradiance(sun_el: float) -> float:
    """Direct-beam irradiance in W/m^2 from an air-mass attenuation law."""
    if sun_el <= 0:
        return 0.0
    am = min(1.0 / math.sin(math.radians(sun_el)), MAX_AIR_MASS)
    return SOLAR_CONSTANT * 0.7 ** (am ** 0.678)


def panel_power(irradiance: float, theta: float, cfg: ArrayConfig) -> float:
    if irradiance < 0:
        raise ValueError("irradiance must be nonnegative")
    return cfg.peak_w * (irradiance / 1000.0) * max(0.0, math.cos(math.radians(theta))) * cfg.derating


@dataclass
class EnergyLedger:
    window: tuple[time, time] = (time(6, 0), time(17, 0))
    samples: list[tuple[datetime, float]] = field(default_factory=list)
    total_kwh: float = 0.0

    def in_window(self, t: datetime) -> bool:
        return self.window[0] <= t.timetz().replace(tzinfo=None) <= self.window[1]


def accumulate(ledger: EnergyLedger, t: datetime, power_w: float, dt_s: float) -> EnergyLedger:
    """Append a sample; energy counts only inside the ledger's local window."""
    if ledger.samples and t < ledger.samples[-1][0]:
        raise OrderingError(f"sample at {t} precedes {ledger.samples[-1][0]}")
    ledger.samples.append((t, float(power_w)))
    if ledger.in_window(t):
        ledger.total_kwh += power_w * dt_s / 3.6e6
    return ledger


def daily_energy(loc: GeoLocation, day: date, cfg: ArrayConfig, orientation=None,
                 interval_s: float = 60.0, calibration: CalibrationMap | None = None,
                 start: time = time(6, 0), end: time = time(17, 0)) -> EnergyLedger:
    """Integrate clear-sky power over the local window.

    ``orientation`` is None for ideal sun tracking through the calibration
    map, or a fixed ``(ref_az, ref_el)`` pair of tracker angles. Each sample
    stands for the interval that follows it (the last one for none).
    """
    cal = calibration or CalibrationMap()
    ledger = EnergyLedger(window=(start, end))
    t0 = datetime.combine(day, start, tzinfo=loc.tz)
    t1 = datetime.combine(day, end, tzinfo=loc.tz)
    count = int(math.floor((t1 - t0).total_seconds() / interval_s + 1e-9)) + 1
    fixed = None if orientation is None else cal.panel_direction(orientation)
    for i in range(count):
        t = t0 + timedelta(seconds=i * interval_s)
        sun = sun_position(loc, t)
        ref = cal.to_tracker(sun) if fixed is None else None
        p_az, p_el = fixed if fixed is not None else cal.panel_direction(ref)
        theta = misalignment_angle(p_az, p_el, sun.azimuth, sun.elevation)
        power = panel_power(clear_sky_irradiance(sun.elevation), theta, cfg)
        accumulate(ledger, t, power, interval_s if i < count - 1 else 0.0)
    return ledger


def fixed_orientation_grid(step_deg: float = 5.0) -> np.ndarray:
    g = np.arange(0.0, 90.0 + 1e-9, step_deg)
    return np.array([(a, e) for a in g for e in g])
