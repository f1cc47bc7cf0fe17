"""Clear-sky daily yield with ideal tracking versus the best fixed orientation."""

import argparse
from datetime import date, timedelta

from depsolar.ephemeris import GeoLocation
from depsolar.pvmodel import ArrayConfig, daily_energy, fixed_orientation_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--day", type=date.fromisoformat, default=date(2017, 4, 18))
    ap.add_argument("--days", type=int, default=1, help="number of consecutive days")
    ap.add_argument("--lat", type=float, default=-33.884)
    ap.add_argument("--lon", type=float, default=151.199)
    ap.add_argument("--utc-offset", type=float, default=10.0)
    ap.add_argument("--derating", type=float, default=0.35)
    ap.add_argument("--grid", type=float, default=5.0, help="fixed-orientation grid step, deg")
    ap.add_argument("--interval", type=float, default=60.0, help="sample spacing, s")
    args = ap.parse_args()

    loc = GeoLocation(args.lat, args.lon, args.utc_offset)
    cfg = ArrayConfig(derating=args.derating)
    grid = fixed_orientation_grid(args.grid)
    print(f"array peak {cfg.peak_w / 1000:.2f} kW, derating {cfg.derating}")
    for i in range(args.days):
        day = args.day + timedelta(days=i)
        track = daily_energy(loc, day, cfg, interval_s=args.interval).total_kwh
        best, where = max((daily_energy(loc, day, cfg, tuple(o), interval_s=args.interval).total_kwh, tuple(o))
                          for o in grid.tolist())
        print(f"{day}  tracking {track:6.2f} kWh   best fixed {best:6.2f} kWh at {where}"
              f"   gain {100 * (track / best - 1):5.1f}%")


if __name__ == "__main__":
    main()
