"""Low-precision sun position and tracker setpoint schedules.

Declination uses the cosine approximation, solar time uses a three-term
equation of time. Accuracy is around a degree, plenty for setpoints on a
tracker that moves 45 degrees in a hundred seconds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path

import numpy as np

from .plant import StateSpaceModel


class EphemerisRangeError(ValueError):
    pass


@dataclass(frozen=True)
class GeoLocation:
    latitude: float
    longitude: float
    utc_offset_hours: float = 0.0

    def __post_init__(self):
        if not -90 <= self.latitude <= 90:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180 <= self.longitude <= 180:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")

    @property
    def tz(self) -> timezone:
        return timezone(timedelta(hours=self.utc_offset_hours))


# rooftop site of the reference installation
SYDNEY = GeoLocation(latitude=-33.884, longitude=151.199, utc_offset_hours=10.0)


@dataclass(frozen=True)
class SunPosition:
    azimuth: float  # degrees clockwise from north, [0, 360)
    elevation: float  # degrees, [-90, 90]


def _as_utc(t: datetime) -> datetime:
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def declination(day_of_year: float) -> float:
    return -23.44 * math.cos(math.radians(360.0 / 365.0 * (day_of_year + 10)))


def equation_of_time(day_of_year: float) -> float:
    """Minutes by which apparent solar time leads mean solar time."""
    b = math.radians(360.0 / 365.0 * (day_of_year - 81))
    return 9.87 * math.sin(2 * b) - 7.53 * math.cos(b) - 1.5 * math.sin(b)


def solar_time_hours(loc: GeoLocation, t: datetime) -> float:
    t = _as_utc(t)
    d = t.timetuple().tm_yday
    hours = t.hour + t.minute / 60 + (t.second + t.microsecond * 1e-6) / 3600
    return hours + loc.longitude / 15.0 + equation_of_time(d) / 60.0


def sun_position(loc: GeoLocation, t: datetime) -> SunPosition:
    t = _as_utc(t)
    if not 1950 <= t.year <= 2100:
        raise EphemerisRangeError(f"{t.isoformat()} outside the 1950-2100 validity window")
    d = t.timetuple().tm_yday
    dec = math.radians(declination(d))
    lat = math.radians(loc.latitude)
    H = math.radians(15.0 * (solar_time_hours(loc, t) - 12.0))
    sin_el = math.sin(lat) * math.sin(dec) + math.cos(lat) * math.cos(dec) * math.cos(H)
    el = math.degrees(math.asin(max(-1.0, min(1.0, sin_el))))
    # azimuth from north, clockwise; afternoon (H > 0) lands in the western half
    y = -math.sin(H) * math.cos(dec)
    x = math.sin(dec) * math.cos(lat) - math.cos(dec) * math.cos(H) * math.sin(lat)
    az = math.degrees(math.atan2(y, x)) % 360.0
    if az >= 360.0:
        az = 0.0
    return SunPosition(az, el)


def wrap180(angle: float) -> float:
    return (angle + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class CalibrationMap:
    """Affine map from true azimuth to the tracker's [0, 90] azimuth axis.

    ref_az = clamp(scale * wrap180(azimuth - center_deg) + offset_deg, 0, 90).
    The default faces north, which suits a southern-hemisphere mount. With
    the sun below the horizon the elevation axis parks at
    ``park_elevation`` while azimuth keeps following the map, so the first
    reference after sunrise is continuous with the parked one.
    """

    center_deg: float = 0.0
    scale: float = 0.5
    offset_deg: float = 45.0
    park_elevation: float = 0.0

    def to_tracker(self, pos: SunPosition) -> np.ndarray:
        az = self.scale * wrap180(pos.azimuth - self.center_deg) + self.offset_deg
        el = self.park_elevation if pos.elevation <= 0 else pos.elevation
        return np.array([min(max(az, 0.0), 90.0), min(max(el, 0.0), 90.0)])

    def panel_direction(self, ref) -> tuple[float, float]:
        """True (azimuth, elevation) of the panel normal for tracker angles ``ref``."""
        az = (self.center_deg + (float(ref[0]) - self.offset_deg) / self.scale) % 360.0
        return az, float(ref[1])


@dataclass(frozen=True)
class SetpointEntry:
    t: datetime
    ref: np.ndarray
    parked: bool
    sun: SunPosition


def setpoint_schedule(loc: GeoLocation, day: date, interval_s: float,
                      model: StateSpaceModel | None = None,
                      calibration: CalibrationMap | None = None,
                      start: time = time(6, 0), end: time = time(17, 0)):
    """Tracker references sampled over the local generation window, endpoints inclusive."""
    if not interval_s > 0:
        raise ValueError("interval_s must be positive")
    cal = calibration or CalibrationMap()
    t0 = datetime.combine(day, start, tzinfo=loc.tz)
    t1 = datetime.combine(day, end, tzinfo=loc.tz)
    count = int(math.floor((t1 - t0).total_seconds() / interval_s + 1e-9)) + 1
    out = []
    for i in range(count):
        t = t0 + timedelta(seconds=i * interval_s)
        pos = sun_position(loc, t)
        ref = cal.to_tracker(pos)
        if model is not None:
            ref = model.clamp_state(ref)
        out.append(SetpointEntry(t, ref, pos.elevation <= 0, pos))
    return out


def load_setpoint_file(path, calibration: CalibrationMap | None = None):
    """Read ``timestamp, azimuth_deg, elevation_deg`` records (ISO-8601 timestamps).

    Returns ``(datetimes, refs)`` with refs already mapped to tracker angles.
    Blank lines and lines starting with ``#`` are skipped.
    """
    cal = calibration or CalibrationMap()
    times, refs = [], []
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            t = datetime.fromisoformat(row[0].strip())
            times.append(t)
            refs.append(cal.to_tracker(SunPosition(float(row[1]) % 360.0, float(row[2]))))
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError(f"{path}: timestamps are not in order")
    return times, refs
